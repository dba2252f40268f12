"""Cascaded latent diffusion: schedules, forward noising, denoisers, sampling.

Each pose scale owns a transformer denoiser with its own fusion block and its
own Markov schedule. Training predicts the injected noise; sampling runs the
reverse chain coarse to fine, feeding each stage's clean output into the next
finer stage as a condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractError, TrainingDivergenceError
from .fusion import DynamicFusion

DEFAULT_STEPS = 250

# per-step noise variance endpoints, calibrated for a 1000-step chain and
# rescaled for other lengths so the terminal latent is near-Gaussian
BETA_START = 1e-4
BETA_END = 0.02
REFERENCE_STEPS = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention coefficients of a T-step Markov noising chain."""

    alphas: np.ndarray
    schedule_kind: str = "linear"
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.size < 1:
            raise ConfigurationError("schedule needs at least one step")
        if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
            raise ConfigurationError("alphas must lie in (0, 1]")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))

    @property
    def T(self) -> int:
        return int(self.alphas.size)

    @property
    def betas(self) -> np.ndarray:
        return 1.0 - self.alphas

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractError(f"step index {t} outside 1..{self.T}")


def build_schedule(kind: str = "linear", T: int = DEFAULT_STEPS) -> NoiseSchedule:
    if T < 1:
        raise ConfigurationError(f"step count must be >= 1, got {T}")
    if kind == "linear":
        scale = REFERENCE_STEPS / T
        betas = np.linspace(BETA_START * scale, BETA_END * scale, T)
        betas = np.clip(betas, 0.0, 0.999)
        return NoiseSchedule(alphas=1.0 - betas, schedule_kind="linear")
    if kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha_bars = f / f[0]
        alphas = np.clip(alpha_bars[1:] / alpha_bars[:-1], 1e-8, 1.0 - 1e-8)
        return NoiseSchedule(alphas=alphas, schedule_kind="cosine")
    raise ConfigurationError(f"unknown schedule kind {kind!r}")


def forward_noise(z0, t: int, eps, sched: NoiseSchedule):
    """Closed-form t-step noising: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def forward_noise_step(z_prev, t: int, eps, sched: NoiseSchedule):
    """One literal Markov step: sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) eps."""
    a = sched.alpha(t)
    return np.sqrt(a) * z_prev + np.sqrt(1.0 - a) * eps


def reverse_step(z_t, t: int, eps_hat, sched: NoiseSchedule):
    """Noise elimination: z_{t-1} = z_t / sqrt(alpha_t) - sqrt(1/alpha_t - 1) eps_hat."""
    a = sched.alpha(t)
    return z_t / np.sqrt(a) - np.sqrt(1.0 / a - 1.0) * eps_hat


class Denoiser(nn.Module):
    """Transformer noise predictor for one scale.

    The fused joint condition and the noised latent enter as a 2-token
    sequence; the predicted noise is read from the latent token's output.
    """

    def __init__(
        self,
        embed_dim: int,
        num_layers: int = 8,
        num_heads: int = 4,
        max_steps: int = DEFAULT_STEPS,
        text_only: bool = False,
        channel_attention: bool = True,
        cross_modal: bool = True,
    ):
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ConfigurationError("embed_dim must be divisible by num_heads")
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.text_only = text_only
        self.fusion = DynamicFusion(
            embed_dim,
            max_steps=max_steps,
            text_only=text_only,
            channel_attention=channel_attention,
            cross_modal=cross_modal,
        )
        self.token_type = nn.Parameter(torch.zeros(2, embed_dim))
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim,
            nhead=num_heads,
            dim_feedforward=embed_dim * 2,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)
        self.out_proj = nn.Linear(embed_dim, embed_dim)

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        c: torch.Tensor,
        z_coarse: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if not self.text_only and z_coarse is None:
            raise ContractError("this denoiser stage requires the coarser latent")
        j_t, _ = self.fusion(c, t, None if self.text_only else z_coarse)
        tokens = torch.stack([j_t, z_t], dim=1) + self.token_type[None]
        out = self.transformer(tokens)
        return self.out_proj(out[:, 1])


class DenoiserStack(nn.Module):
    """Per-scale denoisers plus their noise schedules.

    ``scales`` is the ascending list of active pose scales; the cascade runs
    from the coarsest active scale down to scale ``scales[0]``.
    """

    def __init__(
        self,
        scales,
        embed_dim: int,
        steps: dict[int, int] | None = None,
        schedule_kind: str = "linear",
        num_layers: int = 8,
        num_heads: int = 4,
        channel_attention: bool = True,
        cross_modal: bool = True,
    ):
        super().__init__()
        self.scales = sorted(scales)
        if not self.scales:
            raise ConfigurationError("at least one active scale required")
        self.embed_dim = embed_dim
        steps = steps or {}
        self.schedules: dict[int, NoiseSchedule] = {}
        modules = {}
        coarsest = self.scales[-1]
        for scale in self.scales:
            T = steps.get(scale, DEFAULT_STEPS)
            self.schedules[scale] = build_schedule(schedule_kind, T)
            modules[str(scale)] = Denoiser(
                embed_dim,
                num_layers=num_layers,
                num_heads=num_heads,
                max_steps=T,
                text_only=scale == coarsest,
                channel_attention=channel_attention,
                cross_modal=cross_modal,
            )
        self.denoisers = nn.ModuleDict(modules)

    def denoiser(self, scale: int) -> Denoiser:
        return self.denoisers[str(scale)]

    def coarser_scale(self, scale: int) -> int | None:
        idx = self.scales.index(scale)
        return self.scales[idx + 1] if idx + 1 < len(self.scales) else None


def _gather(values: np.ndarray, t: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(values, dtype=torch.float32)[t - 1][:, None]


def training_loss(
    stack: DenoiserStack,
    latents: dict[int, torch.Tensor],
    c: torch.Tensor,
    generator: torch.Generator | None = None,
):
    """Noise-prediction objective summed over all active stages.

    Conditioning coarse latents are the clean encoder latents (teacher
    forcing); each stage noises its own latent with a fresh draw.
    """
    missing = [s for s in stack.scales if s not in latents]
    if missing:
        raise ContractError(f"missing clean latents for scales {missing}")
    total = None
    components = {}
    for scale in reversed(stack.scales):
        z0 = latents[scale]
        sched = stack.schedules[scale]
        batch = z0.shape[0]
        t = torch.randint(1, sched.T + 1, (batch,), generator=generator)
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
        ab = _gather(sched.alpha_bars, t)
        z_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps

        coarser = stack.coarser_scale(scale)
        cond = latents[coarser] if coarser is not None else None
        eps_hat = stack.denoiser(scale)(z_t, t, c, cond)
        term = (eps - eps_hat).pow(2).sum(dim=1).mean()
        total = term if total is None else total + term
        components[f"stage_{scale}"] = float(term.detach())
    if not torch.isfinite(total):
        raise TrainingDivergenceError(
            "non-finite denoising loss", diagnostics=components
        )
    return total, components


@torch.no_grad()
def sample(
    stack: DenoiserStack,
    c: torch.Tensor,
    generator: torch.Generator | None = None,
    sampler: str = "literal",
    clamp: float = 0.0,
) -> dict[int, torch.Tensor]:
    """Reverse the cascade coarse to fine; returns the clean latent per scale.

    ``literal`` applies the deterministic elimination rule; ``ddpm`` uses the
    standard stochastic posterior step instead. With ``clamp`` > 0, each step
    bounds the implied clean latent to [-clamp, clamp] and recomputes the
    effective noise before updating. Both rules divide out sqrt(alpha_t) at
    every step, so an off-distribution prediction early in the chain is
    amplified by roughly 1/sqrt(alpha_bar); the clamp caps that feedback
    (training latents are whitened, so a bound of a few sigma is loose).
    """
    if sampler not in ("literal", "ddpm"):
        raise ConfigurationError(f"unknown sampler {sampler!r}")
    batch = c.shape[0]
    results: dict[int, torch.Tensor] = {}
    cond = None
    for scale in reversed(stack.scales):
        sched = stack.schedules[scale]
        denoiser = stack.denoiser(scale)
        z = torch.randn((batch, stack.embed_dim), generator=generator)
        for t in range(sched.T, 0, -1):
            tv = torch.full((batch,), t, dtype=torch.long)
            eps_hat = denoiser(z, tv, c, cond)
            a = sched.alpha(t)
            ab = sched.alpha_bar(t)
            if clamp > 0.0:
                z0_hat = (z - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
                z0_hat = z0_hat.clamp(-clamp, clamp)
                eps_hat = (z - np.sqrt(ab) * z0_hat) / np.sqrt(1.0 - ab)
            if sampler == "literal":
                z = z / np.sqrt(a) - np.sqrt(1.0 / a - 1.0) * eps_hat
            else:
                mean = (z - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
                if t > 1:
                    noise = torch.randn(z.shape, generator=generator)
                    z = mean + np.sqrt(1.0 - a) * noise
                else:
                    z = mean
        results[scale] = z
        cond = z
    return results
