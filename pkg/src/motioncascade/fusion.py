"""Dynamic multi-condition fusion.

Injects a learned timestep embedding into both condition vectors, re-weights
each with channel-wise attention (softmax over channels), then balances them
with a two-logit cross-modal softmax into the joint condition for one
denoising step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ContractError
from .vae import sinusoidal_positions


@dataclass
class FusionOutput:
    """Joint condition and the attention diagnostics that produced it."""

    j_t: np.ndarray
    w_z: float
    w_c: float
    channel_attn_z: np.ndarray
    channel_attn_c: np.ndarray
    t: int


class TimestepEmbedding(nn.Module):
    """Learned linear map over a sinusoidal encoding of the step index."""

    def __init__(self, embed_dim: int, max_steps: int = 2048):
        super().__init__()
        self.embed_dim = embed_dim
        self.max_steps = max_steps
        self.register_buffer("table", sinusoidal_positions(max_steps + 1, embed_dim))
        self.proj = nn.Linear(embed_dim, embed_dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if torch.any(t < 0) or torch.any(t > self.max_steps):
            raise ContractError(f"step index outside 0..{self.max_steps}")
        return self.proj(self.table[t])


class ChannelAttention(nn.Module):
    """x_hat = x * softmax(theta2(relu(theta1(x)))) over channels."""

    def __init__(self, embed_dim: int, rescale: bool = False):
        super().__init__()
        hidden = max(embed_dim // 4, 1)
        self.score = nn.Sequential(
            nn.Linear(embed_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, embed_dim),
        )
        self.rescale = rescale
        self.embed_dim = embed_dim

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        attn = torch.softmax(self.score(x), dim=-1)
        out = x * attn
        if self.rescale:
            out = out * self.embed_dim
        return out, attn


class DynamicFusion(nn.Module):
    """Full fusion block for one denoiser stage.

    ``text_only`` drops the motion branch and the cross-modal weights for the
    coarsest stage, which conditions on text alone.
    """

    def __init__(
        self,
        embed_dim: int,
        max_steps: int = 2048,
        text_only: bool = False,
        channel_attention: bool = True,
        cross_modal: bool = True,
        rescale: bool = False,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.text_only = text_only
        self.use_channel_attention = channel_attention
        self.use_cross_modal = cross_modal
        self.timestep = TimestepEmbedding(embed_dim, max_steps)
        self.attn_c = ChannelAttention(embed_dim, rescale)
        if not text_only:
            self.attn_z = ChannelAttention(embed_dim, rescale)
            hidden = max(embed_dim // 4, 1)
            self.joint = nn.Sequential(
                nn.Linear(embed_dim, hidden),
                nn.ReLU(),
                nn.Linear(hidden, 2),
            )

    def forward(
        self,
        c: torch.Tensor,
        t: torch.Tensor,
        z_coarse: torch.Tensor | None = None,
    ):
        """Returns (j_t, diagnostics dict of tensors)."""
        theta_t = self.timestep(t)
        c_tilde = c + theta_t
        if self.use_channel_attention:
            c_hat, attn_c = self.attn_c(c_tilde)
        else:
            c_hat, attn_c = c_tilde, None

        if self.text_only or z_coarse is None:
            if not self.text_only:
                raise ContractError("this fusion stage requires a coarse latent")
            return c_hat, {"attn_c": attn_c}

        z_tilde = z_coarse + theta_t
        if self.use_channel_attention:
            z_hat, attn_z = self.attn_z(z_tilde)
        else:
            z_hat, attn_z = z_tilde, None

        if self.use_cross_modal:
            weights = torch.softmax(self.joint(z_hat + c_hat), dim=-1)
            w_z, w_c = weights[..., 0:1], weights[..., 1:2]
        else:
            w_z = torch.full_like(z_hat[..., 0:1], 0.5)
            w_c = w_z
        j_t = w_z * z_hat + w_c * c_hat
        return j_t, {"attn_c": attn_c, "attn_z": attn_z, "w_z": w_z, "w_c": w_c}


def timestep_embed(block: DynamicFusion, t: int) -> np.ndarray:
    """Single-step convenience wrapper over the learned timestep embedding."""
    with torch.no_grad():
        return block.timestep(torch.tensor([t]))[0].numpy()


def channel_attention(block: ChannelAttention, x_tilde: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        out, _ = block(torch.as_tensor(x_tilde, dtype=torch.float32)[None])
    return out[0].numpy()


def cross_modal_fuse(
    block: DynamicFusion,
    z_coarse: np.ndarray,
    c: np.ndarray,
    t: int,
) -> FusionOutput:
    """Run the full fusion block once and expose all diagnostics."""
    with torch.no_grad():
        j_t, diag = block(
            torch.as_tensor(c, dtype=torch.float32)[None],
            torch.tensor([t]),
            torch.as_tensor(z_coarse, dtype=torch.float32)[None],
        )
    return FusionOutput(
        j_t=j_t[0].numpy(),
        w_z=float(diag["w_z"][0, 0]),
        w_c=float(diag["w_c"][0, 0]),
        channel_attn_z=diag["attn_z"][0].numpy(),
        channel_attn_c=diag["attn_c"][0].numpy(),
        t=t,
    )


def attention_table(block: DynamicFusion, z: np.ndarray, c: np.ndarray, T: int) -> str:
    """Per-step (t, w_z, w_c) table in plain text, for plotting curves."""
    lines = ["t\tw_z\tw_c"]
    for t in range(T + 1):
        out = cross_modal_fuse(block, z, c, t)
        lines.append(f"{t}\t{out.w_z:.6f}\t{out.w_c:.6f}")
    return "\n".join(lines)
