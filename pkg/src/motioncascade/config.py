"""Run configuration: model sizes, schedules, training budgets, ablation axes.

Every checkpoint and report embeds the config hash so incompatible artifacts
fail fast when cross-loaded.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError

ENV_PREFIX = "MOTIONCASCADE_"


@dataclass(frozen=True)
class CorpusConfig:
    families: tuple[str, ...] = ("walk", "run", "jump", "turn", "wave", "sit")
    num_entries: int = 500
    min_frames: int = 40
    max_frames: int = 60
    fps: float = 20.0
    split_seed: int = 0


@dataclass(frozen=True)
class VaeConfig:
    num_layers: int = 9
    num_heads: int = 8
    lambda_mr: float = 1.0
    lambda_kl: float = 1e-4
    squared_recon: bool = False
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float | None = None  # None = use the run-level rate


@dataclass(frozen=True)
class TextEncoderConfig:
    num_layers: int = 2
    num_heads: int = 4
    max_tokens: int = 32
    epochs: int = 100
    batch_size: int = 64


@dataclass(frozen=True)
class DenoiserConfig:
    num_layers: int = 8
    num_heads: int = 4
    steps: tuple[int, ...] = (250, 250, 250, 250)  # per active scale, ascending
    schedule: str = "linear"
    sampler: str = "literal"
    clamp: float = 0.0  # >0 bounds the implied clean latent during sampling
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float | None = None  # None = use the run-level rate


@dataclass(frozen=True)
class FusionConfig:
    channel_attention: bool = True
    cross_modal: bool = True


@dataclass(frozen=True)
class EvalConfig:
    feature_dim: int = 64
    repeats: int = 20
    diversity_pairs: int = 300
    extractor_epochs: int = 60
    classifier_epochs: int = 60


@dataclass(frozen=True)
class RunConfig:
    hierarchy_path: str | None = None  # None = packaged default
    scales: tuple[int, ...] = (1, 2, 3, 4)
    embed_dim: int = 512
    learning_rate: float = 1e-4
    seed: int = 0
    deterministic: bool = True
    contact_threshold: float = 0.05
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    text_encoder: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if not self.scales or sorted(set(self.scales)) != sorted(self.scales):
            raise ConfigurationError(f"invalid scale subset {self.scales}")
        if 1 not in self.scales:
            raise ConfigurationError("scale 1 must always be active")
        if len(self.denoiser.steps) != len(self.scales):
            raise ConfigurationError(
                f"{len(self.scales)} active scales but "
                f"{len(self.denoiser.steps)} step counts"
            )
        if any(T < 1 for T in self.denoiser.steps):
            raise ConfigurationError("step counts must be >= 1")
        if self.denoiser.clamp < 0:
            raise ConfigurationError("clamp must be >= 0 (0 disables it)")
        if self.embed_dim < 2:
            raise ConfigurationError("embed_dim too small")

    @property
    def steps_by_scale(self) -> dict[int, int]:
        return dict(zip(sorted(self.scales), self.denoiser.steps))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def _coerce(value: str, target):
    if isinstance(target, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, tuple):
        return tuple(type(target[0])(v) if target else v for v in value.split(","))
    return value


def _build(cls, doc: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in doc:
            continue
        value = doc[f.name]
        if dataclasses.is_dataclass(f.type) or f.name in (
            "corpus", "vae", "text_encoder", "denoiser", "fusion", "eval"
        ):
            sub_cls = {
                "corpus": CorpusConfig,
                "vae": VaeConfig,
                "text_encoder": TextEncoderConfig,
                "denoiser": DenoiserConfig,
                "fusion": FusionConfig,
                "eval": EvalConfig,
            }[f.name]
            kwargs[f.name] = _build(sub_cls, value)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, env=os.environ) -> RunConfig:
    """Load a run config from YAML, then apply environment overrides.

    Overrides use double-underscore paths, e.g.
    ``MOTIONCASCADE_DENOISER__EPOCHS=50``.
    """
    doc = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: config must be a mapping")
    config = _build(RunConfig, doc)
    config = apply_env_overrides(config, env)
    config.validate()
    return config


def apply_env_overrides(config: RunConfig, env=os.environ) -> RunConfig:
    for key, raw in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        dotted = key[len(ENV_PREFIX):].lower().split("__")
        config = _override(config, dotted, raw)
    return config


def _override(obj, path, raw):
    name = path[0]
    if not hasattr(obj, name):
        raise ConfigurationError(f"unknown config field {'.'.join(path)}")
    current = getattr(obj, name)
    if len(path) == 1:
        return dataclasses.replace(obj, **{name: _coerce(raw, current)})
    return dataclasses.replace(obj, **{name: _override(current, path[1:], raw)})


def desk_config() -> RunConfig:
    """Laptop-scale preset: reduced widths and budgets, same architecture."""
    return RunConfig(
        embed_dim=128,
        vae=VaeConfig(
            num_layers=4, num_heads=4, epochs=240, batch_size=32,
            learning_rate=3e-4,
        ),
        text_encoder=TextEncoderConfig(epochs=150, batch_size=64),
        denoiser=DenoiserConfig(
            num_layers=4, num_heads=4, steps=(100, 100, 100, 100),
            clamp=3.0,
            epochs=8000, batch_size=64, learning_rate=3e-4,
        ),
        eval=EvalConfig(repeats=5),
    )
