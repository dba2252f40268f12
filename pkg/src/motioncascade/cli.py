"""Command-line tool: corpus building, two-stage training, generation,
evaluation, rendering.

Exit codes: 0 success, 2 usage, 3 data, 4 compatibility, 5 numerical
divergence.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from . import errors
from .config import RunConfig, desk_config, load_config
from .corpus import GeneratorConfig, generate_corpus, load_corpus, save_corpus, split_corpus
from .evaluation import build_feature_space, evaluate_system
from .hierarchy import ScaleHierarchy
from .motion_io import load_motion, save_motion
from .render import export_keypoints, render_strip
from .system import MotionSystem, train_stage_one, train_stage_two
from .training import prepare_data

USAGE_ERRORS = (errors.InputError, errors.ContractError)
DATA_ERRORS = (
    errors.ConfigurationError,
    errors.ShapeError,
    errors.InsufficientDataError,
    errors.ProtocolError,
    errors.IntegrityError,
    errors.FormatVersionError,
)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, USAGE_ERRORS):
        return 2
    if isinstance(exc, DATA_ERRORS):
        return 3
    if isinstance(exc, errors.CompatibilityError):
        return 4
    if isinstance(exc, errors.TrainingDivergenceError):
        return 5
    raise exc


def _run(fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except errors.MotionCascadeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))


def _load_run_config(config_path, seed, scales, steps, no_fusion, deterministic,
                     desk) -> RunConfig:
    config = desk_config() if desk and config_path is None else load_config(config_path)
    if seed is not None:
        config = config.replace(seed=seed)
    if scales:
        parsed = tuple(int(s) for s in scales.split(","))
        steps_now = config.denoiser.steps
        if len(steps_now) != len(parsed):
            default_T = steps_now[0] if steps_now else 250
            config = config.replace(
                denoiser=config.denoiser.__class__(
                    **{**config.denoiser.__dict__, "steps": (default_T,) * len(parsed)}
                )
            )
        config = config.replace(scales=parsed)
    if steps:
        parsed_steps = tuple(int(s) for s in steps.split(","))
        config = config.replace(
            denoiser=config.denoiser.__class__(
                **{**config.denoiser.__dict__, "steps": parsed_steps}
            )
        )
    if no_fusion:
        config = config.replace(
            fusion=config.fusion.__class__(
                channel_attention=False, cross_modal=False
            )
        )
    if deterministic:
        config = config.replace(deterministic=True)
    config.validate()
    return config


def _hierarchy(config: RunConfig) -> ScaleHierarchy:
    if config.hierarchy_path:
        return ScaleHierarchy.from_file(config.hierarchy_path)
    return ScaleHierarchy.default()


def _corpus(config: RunConfig, corpus_dir):
    if corpus_dir and (Path(corpus_dir) / "manifest.jsonl").exists():
        return load_corpus(corpus_dir)
    gen = GeneratorConfig(
        families=config.corpus.families,
        min_frames=config.corpus.min_frames,
        max_frames=config.corpus.max_frames,
        fps=config.corpus.fps,
    )
    entries = generate_corpus(
        gen, config.seed, config.corpus.num_entries, _hierarchy(config)
    )
    if corpus_dir:
        save_corpus(entries, corpus_dir)
    return entries


shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="Run configuration YAML."),
    click.option("--seed", type=int, default=None, help="Master seed override."),
    click.option("--deterministic", is_flag=True, help="Force deterministic mode."),
    click.option("--scales", default=None, help="Active scale subset, e.g. 1,4."),
    click.option("--steps", default=None, help="Per-scale step counts, e.g. 250,250,250,250."),
    click.option("--no-fusion", is_flag=True, help="Disable both fusion attentions."),
    click.option("--desk", is_flag=True, help="Start from the laptop-scale preset."),
]


def with_shared(fn):
    for option in reversed(shared_options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Coarse-to-fine text-driven motion synthesis toolkit."""


@main.command("describe-config")
@with_shared
def describe_config(config_path, seed, deterministic, scales, steps, no_fusion, desk):
    """Print the fully resolved configuration and its hash."""
    def inner():
        config = _load_run_config(
            config_path, seed, scales, steps, no_fusion, deterministic, desk
        )
        click.echo(yaml.safe_dump(config.to_dict(), sort_keys=True))
        click.echo(f"config_hash: {config.config_hash()}")
    _run(inner)


@main.command("make-corpus")
@with_shared
@click.option("--out", "out_dir", type=click.Path(), required=True)
def make_corpus(config_path, seed, deterministic, scales, steps, no_fusion, desk,
                out_dir):
    """Generate the synthetic paired text-motion corpus."""
    def inner():
        config = _load_run_config(
            config_path, seed, scales, steps, no_fusion, deterministic, desk
        )
        entries = _corpus(config, out_dir)
        click.echo(f"wrote {len(entries)} entries to {out_dir}")
    _run(inner)


@main.command("train-vae")
@with_shared
@click.option("--corpus", "corpus_dir", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train_vae_cmd(config_path, seed, deterministic, scales, steps, no_fusion, desk,
                  corpus_dir, out_dir):
    """Stage one: train the per-scale VAEs and the text encoder."""
    def inner():
        config = _load_run_config(
            config_path, seed, scales, steps, no_fusion, deterministic, desk
        )
        entries = _corpus(config, corpus_dir)
        data = prepare_data(config, entries, _hierarchy(config))
        system = train_stage_one(
            config, data, log=lambda rec: click.echo(f"vae {rec}", err=True)
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        system.save(out / "stage1.ckpt")
        click.echo(f"wrote {out / 'stage1.ckpt'} (config {config.config_hash()})")
    _run(inner)


@main.command("train-diffusion")
@with_shared
@click.option("--corpus", "corpus_dir", type=click.Path(), default=None)
@click.option("--vae-checkpoint", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train_diffusion_cmd(config_path, seed, deterministic, scales, steps, no_fusion,
                        desk, corpus_dir, vae_checkpoint, out_dir):
    """Stage two: train the cascaded denoisers on top of frozen stage one."""
    def inner():
        config = _load_run_config(
            config_path, seed, scales, steps, no_fusion, deterministic, desk
        )
        system = MotionSystem.load(vae_checkpoint, expected_hash=config.config_hash())
        entries = _corpus(config, corpus_dir)
        data = prepare_data(config, entries, system.hierarchy)
        system = train_stage_two(
            system, data, log=lambda rec: click.echo(f"diffusion {rec}", err=True)
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        system.save(out / "full.ckpt")
        click.echo(f"wrote {out / 'full.ckpt'} (config {config.config_hash()})")
    _run(inner)


@main.command("generate")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--text", required=True)
@click.option("--n-samples", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--frames", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def generate_cmd(checkpoint, text, n_samples, seed, frames, out_dir):
    """Generate motions for one prompt; writes motion files plus a manifest."""
    def inner():
        system = MotionSystem.load(checkpoint)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = []
        for i in range(n_samples):
            sample_seed = seed + i
            motion = system.generate(text, num_frames=frames, seed=sample_seed)
            motion_path = out / f"sample_{i:03d}.mocb"
            save_motion(motion, motion_path)
            export_keypoints(motion, system.hierarchy, out / f"sample_{i:03d}.json")
            manifest.append(
                {
                    "index": i,
                    "text": text,
                    "seed": sample_seed,
                    "frames": motion.num_frames,
                    "motion": motion_path.name,
                    "keypoints": f"sample_{i:03d}.json",
                }
            )
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        click.echo(f"wrote {n_samples} samples to {out}")
    _run(inner)


@main.command("evaluate")
@with_shared
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(), default=None)
@click.option("--repeats", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def evaluate_cmd(config_path, seed, deterministic, scales, steps, no_fusion, desk,
                 checkpoint, corpus_dir, repeats, out_path):
    """Run the full metric suite on the test split; writes a report."""
    def inner():
        system = MotionSystem.load(checkpoint)
        config = system.config if config_path is None else _load_run_config(
            config_path, seed, scales, steps, no_fusion, deterministic, desk
        )
        entries = _corpus(config, corpus_dir)
        splits = split_corpus(entries, config.corpus.split_seed)
        if not splits["test"]:
            raise errors.ProtocolError("test split is empty")
        space, classifier = build_feature_space(
            system, splits["train"], seed=config.seed
        )
        report = evaluate_system(
            system,
            splits["test"],
            space,
            classifier,
            repeats=repeats,
            seed=seed if seed is not None else config.seed,
        )
        report.save(Path(out_path))
        click.echo(report.to_text())
    _run(inner)


@main.command("render")
@click.option("--motion", "motion_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["keypoints", "strip"]),
              default="keypoints")
@click.option("--stride", type=int, default=10)
@click.option("--hierarchy", "hierarchy_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def render_cmd(motion_path, fmt, stride, hierarchy_path, out_path):
    """Export a motion file as a keypoint animation or a strip image."""
    def inner():
        motion = load_motion(motion_path)
        hierarchy = (
            ScaleHierarchy.from_file(hierarchy_path)
            if hierarchy_path
            else ScaleHierarchy.default()
        )
        if fmt == "keypoints":
            export_keypoints(motion, hierarchy, out_path)
        else:
            panels = render_strip(motion, hierarchy, out_path, stride)
            click.echo(f"{panels} panels")
        click.echo(f"wrote {out_path}")
    _run(inner)


if __name__ == "__main__":
    main()
