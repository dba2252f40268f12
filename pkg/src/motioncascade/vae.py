"""Per-scale transformer motion VAEs.

Each scale owns an encoder/decoder pair. The encoder prepends two learned
distribution tokens whose outputs become the posterior mean and log-variance;
the decoder cross-attends positional query tokens of the requested length to
the latent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractError, InputError


@dataclass
class LatentCode:
    """A latent motion embedding of one scale, clean or forward-noised."""

    vector: np.ndarray
    scale_index: int
    kind: str = "clean"  # "clean" | "noised"
    t: int | None = None

    def __post_init__(self):
        if self.kind not in ("clean", "noised"):
            raise ContractError(f"unknown latent kind {self.kind!r}")
        if (self.t is not None) != (self.kind == "noised"):
            raise ContractError("step index t is present iff the latent is noised")

    def validate(self, embed_dim: int | None = None, max_t: int | None = None) -> None:
        if not np.isfinite(self.vector).all():
            raise InputError("latent contains non-finite values")
        if embed_dim is not None and self.vector.shape != (embed_dim,):
            raise InputError(
                f"latent has shape {self.vector.shape}, expected ({embed_dim},)"
            )
        if self.t is not None and max_t is not None and not 0 <= self.t <= max_t:
            raise ContractError(f"step index {self.t} outside 0..{max_t}")


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over the latent space, stored as (mu, log-variance)."""

    mu: torch.Tensor
    logvar: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)


def reparameterize(posterior: GaussianPosterior, noise: torch.Tensor) -> torch.Tensor:
    """z = mu + sigma * noise."""
    if not torch.isfinite(noise).all():
        raise InputError("reparameterization noise must be finite")
    return posterior.mu + posterior.sigma * noise


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)), summed over dimensions."""
    return 0.5 * (torch.exp(logvar) + mu * mu - 1.0 - logvar).sum(dim=-1)


def sinusoidal_positions(length: int, dim: int, device=None) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float32, device=device)[:, None]
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float32, device=device)
        * (-math.log(10000.0) / dim)
    )
    pe = torch.zeros(length, dim, device=device)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: dim // 2])
    return pe


class MotionVae(nn.Module):
    """Variational autoencoder for one pose scale."""

    def __init__(
        self,
        feature_dim: int,
        scale_index: int,
        latent_dim: int = 512,
        num_layers: int = 9,
        num_heads: int = 8,
        max_frames: int = 512,
    ):
        super().__init__()
        if latent_dim % num_heads != 0:
            raise ConfigurationError("latent_dim must be divisible by num_heads")
        self.feature_dim = feature_dim
        self.scale_index = scale_index
        self.latent_dim = latent_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.max_frames = max_frames

        self.input_proj = nn.Linear(feature_dim, latent_dim)
        self.dist_tokens = nn.Parameter(torch.randn(2, latent_dim) * 0.02)
        self.register_buffer(
            "pos_enc", sinusoidal_positions(max_frames + 2, latent_dim)
        )

        enc_layer = nn.TransformerEncoderLayer(
            d_model=latent_dim,
            nhead=num_heads,
            dim_feedforward=latent_dim * 2,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(enc_layer, num_layers, enable_nested_tensor=False)

        dec_layer = nn.TransformerDecoderLayer(
            d_model=latent_dim,
            nhead=num_heads,
            dim_feedforward=latent_dim * 2,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers)
        self.output_proj = nn.Linear(latent_dim, feature_dim)

    def encode(
        self, features: torch.Tensor, pad_mask: torch.Tensor | None = None
    ) -> GaussianPosterior:
        """features: [B, F, D] normalized; pad_mask True at padded frames."""
        if features.shape[-1] != self.feature_dim:
            raise ConfigurationError(
                f"scale {self.scale_index} VAE expects dim {self.feature_dim}, "
                f"got {features.shape[-1]}"
            )
        batch, num_frames = features.shape[:2]
        x = self.input_proj(features) + self.pos_enc[2 : 2 + num_frames]
        tokens = self.dist_tokens[None].expand(batch, -1, -1) + self.pos_enc[:2]
        x = torch.cat([tokens, x], dim=1)
        if pad_mask is not None:
            pad_mask = torch.cat(
                [torch.zeros(batch, 2, dtype=torch.bool, device=pad_mask.device),
                 pad_mask],
                dim=1,
            )
        out = self.encoder(x, src_key_padding_mask=pad_mask)
        return GaussianPosterior(mu=out[:, 0], logvar=out[:, 1])

    def decode(self, z: torch.Tensor, num_frames: int) -> torch.Tensor:
        """z: [B, latent_dim] clean latent -> [B, num_frames, D]."""
        if num_frames > self.max_frames:
            raise ContractError(f"requested {num_frames} > max {self.max_frames} frames")
        batch = z.shape[0]
        queries = self.pos_enc[2 : 2 + num_frames][None].expand(batch, -1, -1)
        out = self.decoder(queries, memory=z[:, None, :])
        return self.output_proj(out)

    def decode_latent(self, code: LatentCode, num_frames: int) -> torch.Tensor:
        if code.kind != "clean":
            raise ContractError("decoder only accepts clean latents")
        if code.scale_index != self.scale_index:
            raise ConfigurationError(
                f"latent of scale {code.scale_index} fed to scale "
                f"{self.scale_index} decoder"
            )
        z = torch.as_tensor(code.vector, dtype=torch.float32)[None]
        return self.decode(z, num_frames)


def reconstruction_norm(
    inputs: torch.Tensor,
    recons: torch.Tensor,
    pad_mask: torch.Tensor | None = None,
    squared: bool = False,
) -> torch.Tensor:
    """Per-sample l2 norm of the reconstruction residual (optionally squared)."""
    diff = inputs - recons
    if pad_mask is not None:
        diff = diff * (~pad_mask).float()[..., None]
    sq = diff.pow(2).flatten(start_dim=1).sum(dim=1)
    return sq if squared else torch.sqrt(sq + 1e-12)


def vae_loss(
    inputs: dict[int, torch.Tensor],
    recons: dict[int, torch.Tensor],
    posteriors: dict[int, GaussianPosterior],
    lambda_mr: float = 1.0,
    lambda_kl: float = 1e-4,
    pad_masks: dict[int, torch.Tensor] | None = None,
    squared: bool = False,
):
    """Joint objective over all pose scales: reconstruction + KL terms.

    Returns (total, components) where components holds per-scale means.
    """
    scales = sorted(inputs)
    if sorted(recons) != scales or sorted(posteriors) != scales:
        raise InputError(
            f"scales mismatch: inputs {scales}, recons {sorted(recons)}, "
            f"posteriors {sorted(posteriors)}"
        )
    total = None
    components: dict[str, float] = {}
    for scale in scales:
        mask = pad_masks.get(scale) if pad_masks else None
        mr = reconstruction_norm(
            inputs[scale], recons[scale], mask, squared=squared
        ).mean()
        kl = kl_divergence(posteriors[scale].mu, posteriors[scale].logvar).mean()
        term = lambda_mr * mr + lambda_kl * kl
        total = term if total is None else total + term
        components[f"mr_{scale}"] = float(mr.detach())
        components[f"kl_{scale}"] = float(kl.detach())
    return total, components
