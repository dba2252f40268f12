"""Two-stage training: motion VAEs + text encoder first, then the cascade.

All loops are deterministic under a fixed seed in single-worker mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .corpus import (
    CorpusEntry,
    NormalizationStats,
    split_corpus,
)
from .diffusion import DenoiserStack, training_loss
from .errors import TrainingDivergenceError
from .hierarchy import ScaleHierarchy
from .motion import layout_for_scale
from .scales import build_multiscale
from .text_encoder import TextEncoder, Vocabulary, freeze
from .vae import MotionVae, reparameterize, vae_loss


def set_determinism(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


@dataclass
class PreparedData:
    """Corpus tensors ready for training: padded, masked, normalized."""

    config: RunConfig
    hierarchy: ScaleHierarchy
    entries: list[CorpusEntry]
    split_indices: dict[str, list[int]]
    stats: dict[int, NormalizationStats]
    features: dict[int, torch.Tensor]  # [N, Fmax, D] normalized
    pad_masks: dict[int, torch.Tensor]  # [N, Fmax] True at padding
    frames: np.ndarray
    texts: list[list[str]]
    labels: list[str]

    @property
    def median_frames(self) -> int:
        return int(np.median(self.frames))

    def batch(self, indices, scale: int):
        idx = torch.as_tensor(indices, dtype=torch.long)
        return self.features[scale][idx], self.pad_masks[scale][idx]


def prepare_data(
    config: RunConfig,
    entries: list[CorpusEntry],
    hierarchy: ScaleHierarchy,
) -> PreparedData:
    from .corpus import compute_normalization, normalize

    multiscale = [
        build_multiscale(e.motion, hierarchy, config.contact_threshold)
        for e in entries
    ]
    splits = split_corpus(entries, config.corpus.split_seed)
    index_of = {e.entry_id: i for i, e in enumerate(entries)}
    split_indices = {
        name: [index_of[e.entry_id] for e in members]
        for name, members in splits.items()
    }

    frames = np.array([e.motion.num_frames for e in entries])
    max_frames = int(frames.max())

    stats, features, pad_masks = {}, {}, {}
    for scale in config.scales:
        seqs = [ms[scale - 1] for ms in multiscale]
        stats[scale] = compute_normalization(
            [seqs[i] for i in split_indices["train"]]
        )
        dim = layout_for_scale(hierarchy, scale).dim
        buf = torch.zeros(len(entries), max_frames, dim)
        mask = torch.ones(len(entries), max_frames, dtype=torch.bool)
        for i, seq in enumerate(seqs):
            normed = normalize(seq, stats[scale])
            buf[i, : seq.num_frames] = torch.from_numpy(normed.features)
            mask[i, : seq.num_frames] = False
        features[scale] = buf
        pad_masks[scale] = mask

    return PreparedData(
        config=config,
        hierarchy=hierarchy,
        entries=entries,
        split_indices=split_indices,
        stats=stats,
        features=features,
        pad_masks=pad_masks,
        frames=frames,
        texts=[list(e.texts) for e in entries],
        labels=[e.action_label or "" for e in entries],
    )


def build_vaes(config: RunConfig, hierarchy: ScaleHierarchy) -> dict[int, MotionVae]:
    max_frames = config.corpus.max_frames
    return {
        scale: MotionVae(
            feature_dim=layout_for_scale(hierarchy, scale).dim,
            scale_index=scale,
            latent_dim=config.embed_dim,
            num_layers=config.vae.num_layers,
            num_heads=config.vae.num_heads,
            max_frames=max(max_frames, 64),
        )
        for scale in config.scales
    }


def _check_finite(loss, components):
    if not torch.isfinite(loss):
        raise TrainingDivergenceError("non-finite loss", diagnostics=components)


def train_vaes(config: RunConfig, data: PreparedData, log=None):
    """Joint end-to-end training of all active-scale VAEs, one optimizer."""
    generator = set_determinism(config.seed)
    vaes = build_vaes(config, data.hierarchy)
    params = [p for vae in vaes.values() for p in vae.parameters()]
    lr = config.vae.learning_rate or config.learning_rate
    optimizer = torch.optim.AdamW(params, lr=lr)
    lr_schedule = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.vae.epochs, eta_min=lr * 0.1
    )

    train_idx = np.array(data.split_indices["train"])
    rng = np.random.default_rng(config.seed)
    batch_size = config.vae.batch_size
    curves = []
    for epoch in range(config.vae.epochs):
        order = rng.permutation(train_idx)
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            inputs, recons, posteriors, masks = {}, {}, {}, {}
            for scale in config.scales:
                feats, mask = data.batch(idx, scale)
                post = vaes[scale].encode(feats, mask)
                noise = torch.randn(post.mu.shape, generator=generator)
                z = reparameterize(post, noise)
                recon = vaes[scale].decode(z, feats.shape[1])
                inputs[scale] = feats
                recons[scale] = recon
                posteriors[scale] = post
                masks[scale] = mask
            loss, components = vae_loss(
                inputs, recons, posteriors,
                lambda_mr=config.vae.lambda_mr,
                lambda_kl=config.vae.lambda_kl,
                pad_masks=masks,
                squared=config.vae.squared_recon,
            )
            _check_finite(loss, components)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        lr_schedule.step()
        curves.append({"epoch": epoch, "loss": epoch_loss / max(batches, 1)})
        if log:
            log(curves[-1])
    for vae in vaes.values():
        vae.eval()
    return vaes, curves


@torch.no_grad()
def encode_latents(
    vaes: dict[int, MotionVae], data: PreparedData
) -> dict[int, torch.Tensor]:
    """Clean posterior means for every entry and active scale."""
    latents = {}
    for scale, vae in vaes.items():
        vae.eval()
        post = vae.encode(data.features[scale], data.pad_masks[scale])
        latents[scale] = post.mu.detach()
    return latents


@dataclass
class LatentScaler:
    """Per-dimension affine map keeping diffusion inputs near unit scale."""

    mean: torch.Tensor
    std: torch.Tensor

    @classmethod
    def fit(cls, latents: torch.Tensor, train_idx) -> "LatentScaler":
        idx = torch.as_tensor(list(train_idx), dtype=torch.long)
        sub = latents[idx]
        return cls(
            mean=sub.mean(dim=0),
            std=sub.std(dim=0).clamp_min(1e-6),
        )

    def transform(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.mean) / self.std

    def inverse(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.std + self.mean

    def state_dict(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_state(cls, state) -> "LatentScaler":
        return cls(mean=state["mean"], std=state["std"])


def fit_latent_scalers(latents, data: PreparedData) -> dict[int, LatentScaler]:
    train_idx = data.split_indices["train"]
    return {
        scale: LatentScaler.fit(z, train_idx) for scale, z in latents.items()
    }


def train_text_encoder(
    config: RunConfig,
    data: PreparedData,
    z1: torch.Tensor,
    log=None,
) -> TextEncoder:
    """Contrastive pretraining of the text encoder against scale-1 latents."""
    generator = set_determinism(config.seed + 1)
    vocab = Vocabulary.from_texts(t for texts in data.texts for t in texts)
    encoder = TextEncoder(
        vocab,
        embed_dim=config.embed_dim,
        num_layers=config.text_encoder.num_layers,
        num_heads=config.text_encoder.num_heads,
        max_tokens=config.text_encoder.max_tokens,
    )
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.learning_rate)
    temperature = 0.07
    z1 = z1.detach()

    train_idx = np.array(data.split_indices["train"])
    rng = np.random.default_rng(config.seed + 1)
    batch_size = config.text_encoder.batch_size
    for epoch in range(config.text_encoder.epochs):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            texts = [
                data.texts[i][rng.integers(len(data.texts[i]))] for i in idx
            ]
            emb = encoder.encode_batch(texts)
            target = z1[torch.as_tensor(idx, dtype=torch.long)]
            emb_n = nn.functional.normalize(emb, dim=-1)
            tgt_n = nn.functional.normalize(target, dim=-1)
            logits = emb_n @ tgt_n.T / temperature
            labels = torch.arange(len(idx))
            loss = 0.5 * (
                nn.functional.cross_entropy(logits, labels)
                + nn.functional.cross_entropy(logits.T, labels)
            )
            _check_finite(loss, {"epoch": epoch})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        if log:
            log({"epoch": epoch, "loss": float(loss.detach())})
    return freeze(encoder)


def build_stack(config: RunConfig) -> DenoiserStack:
    return DenoiserStack(
        scales=config.scales,
        embed_dim=config.embed_dim,
        steps=config.steps_by_scale,
        schedule_kind=config.denoiser.schedule,
        num_layers=config.denoiser.num_layers,
        num_heads=config.denoiser.num_heads,
        channel_attention=config.fusion.channel_attention,
        cross_modal=config.fusion.cross_modal,
    )


def train_diffusion(
    config: RunConfig,
    data: PreparedData,
    latents: dict[int, torch.Tensor],
    scalers: dict[int, LatentScaler],
    encoder: TextEncoder,
    log=None,
):
    """Stage-two training of all denoisers end-to-end with teacher forcing."""
    generator = set_determinism(config.seed + 2)
    stack = build_stack(config)
    lr = config.denoiser.learning_rate or config.learning_rate
    optimizer = torch.optim.AdamW(stack.parameters(), lr=lr)
    lr_schedule = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.denoiser.epochs, eta_min=lr * 0.1
    )

    scaled = {
        scale: scalers[scale].transform(z).detach()
        for scale, z in latents.items()
    }
    # the encoder is frozen: precompute every text embedding once
    with torch.no_grad():
        text_embs = [encoder.encode_batch(texts).detach() for texts in data.texts]

    train_idx = np.array(data.split_indices["train"])
    rng = np.random.default_rng(config.seed + 2)
    batch_size = config.denoiser.batch_size
    curves = []
    for epoch in range(config.denoiser.epochs):
        order = rng.permutation(train_idx)
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            c = torch.stack(
                [text_embs[i][rng.integers(len(text_embs[i]))] for i in idx]
            )
            batch_latents = {
                scale: scaled[scale][torch.as_tensor(idx, dtype=torch.long)]
                for scale in config.scales
            }
            loss, components = training_loss(stack, batch_latents, c, generator)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        lr_schedule.step()
        curves.append({"epoch": epoch, "loss": epoch_loss / max(batches, 1)})
        if log:
            log(curves[-1])
    stack.eval()
    return stack, curves
