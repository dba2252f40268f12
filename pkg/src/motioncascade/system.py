"""Trained-system bundle: checkpoint IO and text-to-motion generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, _build
from .corpus import NormalizationStats, denormalize
from .diffusion import DenoiserStack, sample
from .errors import CompatibilityError, ContractError, InputError
from .hierarchy import ScaleHierarchy
from .motion import MotionSequence, layout_for_scale
from .text_encoder import TextEncoder, Vocabulary, freeze
from .training import (
    LatentScaler,
    PreparedData,
    build_stack,
    build_vaes,
    encode_latents,
    fit_latent_scalers,
    train_diffusion,
    train_text_encoder,
    train_vaes,
)
from .vae import LatentCode, MotionVae

CHECKPOINT_SCHEMA = 1


def _clamp_contacts(motion: MotionSequence) -> MotionSequence:
    """Decoder outputs are unconstrained; contact flags live in [0, 1]."""
    if "foot_contacts" in motion.layout:
        sl = motion.layout.slice("foot_contacts")
        motion.features[:, sl] = np.clip(motion.features[:, sl], 0.0, 1.0)
    return motion


@dataclass
class MotionSystem:
    """Everything needed to turn a prompt into a scale-1 motion sequence."""

    config: RunConfig
    hierarchy: ScaleHierarchy
    stats: dict[int, NormalizationStats]
    vaes: dict[int, MotionVae]
    text_encoder: TextEncoder
    latent_scalers: dict[int, LatentScaler]
    stack: DenoiserStack | None = None
    median_frames: int = 50
    curves: dict = field(default_factory=dict)

    def encode_text(self, text: str):
        return self.text_encoder.encode_text(text)

    @torch.no_grad()
    def sample_latent(
        self, text: str, seed: int = 0, sampler: str | None = None
    ) -> LatentCode:
        """Run the full reverse cascade; returns the clean finest latent."""
        if self.stack is None:
            raise ContractError("diffusion stack not trained yet")
        emb = self.encode_text(text)
        c = torch.as_tensor(emb.vector, dtype=torch.float32)[None]
        generator = torch.Generator()
        generator.manual_seed(seed)
        sampler = sampler or self.config.denoiser.sampler
        latents = sample(
            self.stack, c, generator, sampler, clamp=self.config.denoiser.clamp
        )
        finest = min(self.config.scales)
        z = self.latent_scalers[finest].inverse(latents[finest])[0]
        return LatentCode(
            vector=z.numpy(), scale_index=finest, kind="clean"
        )

    @torch.no_grad()
    def decode_latent(self, code: LatentCode, num_frames: int) -> MotionSequence:
        vae = self.vaes[code.scale_index]
        feats = vae.decode_latent(code, num_frames)[0].numpy()
        layout = layout_for_scale(self.hierarchy, code.scale_index)
        normed = MotionSequence(
            scale_index=code.scale_index,
            fps=self.config.corpus.fps,
            features=feats,
            layout=layout,
            num_joints=self.hierarchy.num_joints(code.scale_index),
        )
        return _clamp_contacts(denormalize(normed, self.stats[code.scale_index]))

    @torch.no_grad()
    def generate_batch(
        self,
        texts: list[str],
        num_frames: int | None = None,
        seed: int = 0,
        sampler: str | None = None,
    ) -> list[MotionSequence]:
        """Generate one motion per prompt, sharing a single reverse cascade."""
        if self.stack is None:
            raise ContractError("diffusion stack not trained yet")
        if not texts:
            raise InputError("no prompts given")
        c = self.text_encoder.encode_batch(texts)
        generator = torch.Generator()
        generator.manual_seed(seed)
        sampler = sampler or self.config.denoiser.sampler
        latents = sample(
            self.stack, c, generator, sampler, clamp=self.config.denoiser.clamp
        )
        finest = min(self.config.scales)
        z = self.latent_scalers[finest].inverse(latents[finest])
        frames = num_frames or self.median_frames
        feats = self.vaes[finest].decode(z, frames).numpy()
        layout = layout_for_scale(self.hierarchy, finest)
        motions = []
        for i in range(len(texts)):
            normed = MotionSequence(
                scale_index=finest,
                fps=self.config.corpus.fps,
                features=feats[i],
                layout=layout,
                num_joints=self.hierarchy.num_joints(finest),
            )
            motions.append(_clamp_contacts(denormalize(normed, self.stats[finest])))
        return motions

    def generate(
        self,
        text: str,
        num_frames: int | None = None,
        seed: int = 0,
        sampler: str | None = None,
    ) -> MotionSequence:
        if not text or not text.strip():
            raise InputError("cannot generate from empty text")
        code = self.sample_latent(text, seed, sampler)
        motion = self.decode_latent(code, num_frames or self.median_frames)
        if not np.isfinite(motion.features).all():
            raise ContractError("generated motion contains non-finite values")
        return motion

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        payload = {
            "schema_version": CHECKPOINT_SCHEMA,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "hierarchy": self.hierarchy.to_dict(),
            "stats": {s: st.to_dict() for s, st in self.stats.items()},
            "latent_scalers": {
                s: sc.state_dict() for s, sc in self.latent_scalers.items()
            },
            "vocab": self.text_encoder.vocab.token_to_id,
            "median_frames": self.median_frames,
            "curves": self.curves,
            "state": {
                "text_encoder": self.text_encoder.state_dict(),
                **{
                    f"vae_{s}": vae.state_dict() for s, vae in self.vaes.items()
                },
            },
        }
        if self.stack is not None:
            payload["state"]["stack"] = self.stack.state_dict()
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)  # atomic write

    @classmethod
    def load(cls, path: str | Path, expected_hash: str | None = None):
        payload = torch.load(path, weights_only=False)
        version = payload.get("schema_version")
        if version != CHECKPOINT_SCHEMA:
            raise CompatibilityError(
                f"{path}: checkpoint schema {version!r} unsupported"
            )
        if expected_hash is not None and payload["config_hash"] != expected_hash:
            raise CompatibilityError(
                f"{path}: config hash {payload['config_hash']} != {expected_hash}"
            )
        config = _build(RunConfig, payload["config"])
        hierarchy = ScaleHierarchy.from_dict(payload["hierarchy"])

        vocab = Vocabulary()
        vocab.token_to_id = payload["vocab"]
        encoder = TextEncoder(
            vocab,
            embed_dim=config.embed_dim,
            num_layers=config.text_encoder.num_layers,
            num_heads=config.text_encoder.num_heads,
            max_tokens=config.text_encoder.max_tokens,
        )
        encoder.load_state_dict(payload["state"]["text_encoder"])
        freeze(encoder)

        vaes = build_vaes(config, hierarchy)
        for scale, vae in vaes.items():
            vae.load_state_dict(payload["state"][f"vae_{scale}"])
            vae.eval()

        stack = None
        if "stack" in payload["state"]:
            stack = build_stack(config)
            stack.load_state_dict(payload["state"]["stack"])
            stack.eval()

        return cls(
            config=config,
            hierarchy=hierarchy,
            stats={
                s: NormalizationStats.from_dict(st)
                for s, st in payload["stats"].items()
            },
            vaes=vaes,
            text_encoder=encoder,
            latent_scalers={
                s: LatentScaler.from_state(st)
                for s, st in payload["latent_scalers"].items()
            },
            stack=stack,
            median_frames=payload["median_frames"],
            curves=payload.get("curves", {}),
        )


def train_stage_one(config: RunConfig, data: PreparedData, log=None) -> MotionSystem:
    """VAEs trained end-to-end, then the contrastive text encoder, frozen."""
    vaes, vae_curves = train_vaes(config, data, log)
    latents = encode_latents(vaes, data)
    scalers = fit_latent_scalers(latents, data)
    encoder = train_text_encoder(config, data, latents[1], log)
    return MotionSystem(
        config=config,
        hierarchy=data.hierarchy,
        stats=data.stats,
        vaes=vaes,
        text_encoder=encoder,
        latent_scalers=scalers,
        median_frames=data.median_frames,
        curves={"vae": vae_curves},
    )


def train_stage_two(
    system: MotionSystem, data: PreparedData, log=None
) -> MotionSystem:
    """Cascaded denoiser training on top of a frozen stage-one system."""
    if system.config.config_hash() != data.config.config_hash():
        raise CompatibilityError(
            "stage-one checkpoint was trained under a different config"
        )
    latents = encode_latents(system.vaes, data)
    stack, curves = train_diffusion(
        system.config, data, latents, system.latent_scalers,
        system.text_encoder, log,
    )
    system.stack = stack
    system.curves["diffusion"] = curves
    return system
