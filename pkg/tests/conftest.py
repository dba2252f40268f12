"""Shared fixtures.

The end-to-end tests need trained systems, which take tens of minutes at the
laptop-scale preset. Everything expensive is cached under ``.cache/`` keyed by
the config hash, so reruns are fast and a stale cache invalidates itself
whenever the configuration (and therefore the hash) changes.
"""
import json
from pathlib import Path

import pytest
import torch

from motioncascade.config import desk_config
from motioncascade.corpus import GeneratorConfig, generate_corpus, split_corpus
from motioncascade.evaluation import MetricsReport, build_feature_space, evaluate_system
from motioncascade.hierarchy import ScaleHierarchy
from motioncascade.metrics import ActionClassifier, FeatureSpace, MotionFeatureNet, TextFeatureNet
from motioncascade.system import MotionSystem, train_stage_one, train_stage_two
from motioncascade.text_encoder import Vocabulary
from motioncascade.training import prepare_data

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"

EVAL_SEED = 11


def full_desk_config():
    return desk_config()


def s1_desk_config():
    """Finest-scale-only ablation on the same denoising budget."""
    base = desk_config()
    return base.replace(
        scales=(1,),
        denoiser=base.denoiser.__class__(
            num_layers=base.denoiser.num_layers,
            num_heads=base.denoiser.num_heads,
            steps=(base.denoiser.steps[0],),
            schedule=base.denoiser.schedule,
            sampler=base.denoiser.sampler,
            epochs=base.denoiser.epochs,
            batch_size=base.denoiser.batch_size,
        ),
    )


def build_corpus(config, hierarchy):
    gen = GeneratorConfig(
        families=config.corpus.families,
        min_frames=config.corpus.min_frames,
        max_frames=config.corpus.max_frames,
        fps=config.corpus.fps,
    )
    return generate_corpus(gen, config.seed, config.corpus.num_entries, hierarchy)


def trained_system_cached(config, log=None) -> MotionSystem:
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"system_{config.config_hash()}.ckpt"
    if path.exists():
        return MotionSystem.load(path, expected_hash=config.config_hash())
    hierarchy = ScaleHierarchy.default()
    entries = build_corpus(config, hierarchy)
    data = prepare_data(config, entries, hierarchy)
    system = train_stage_one(config, data, log=log)
    system = train_stage_two(system, data, log=log)
    system.save(path)
    return system


def metric_kit_cached(system, entries) -> tuple[FeatureSpace, ActionClassifier]:
    """The shared metric feature space and action classifier, cache-backed."""
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"metrics_{system.config.config_hash()}.pt"
    splits = split_corpus(entries, system.config.corpus.split_seed)
    if path.exists():
        payload = torch.load(path, weights_only=False)
        vocab = Vocabulary()
        vocab.token_to_id = payload["vocab"]
        stats = system.stats[1]
        motion_net = MotionFeatureNet(stats.mean.shape[0], payload["dim"])
        motion_net.load_state_dict(payload["motion"])
        text_net = TextFeatureNet(len(vocab), payload["dim"])
        text_net.load_state_dict(payload["text"])
        motion_net.eval()
        text_net.eval()
        space = FeatureSpace(motion_net, text_net, vocab, stats, payload["dim"])
        classifier = ActionClassifier(stats.mean.shape[0], tuple(payload["labels"]))
        classifier.load_state_dict(payload["classifier"])
        classifier.eval()
        return space, classifier
    space, classifier = build_feature_space(
        system, splits["train"], seed=system.config.seed
    )
    torch.save(
        {
            "dim": space.dim,
            "vocab": space.vocab.token_to_id,
            "motion": space.motion_extractor.state_dict(),
            "text": space.text_extractor.state_dict(),
            "labels": list(classifier.labels),
            "classifier": classifier.state_dict(),
        },
        path,
    )
    return space, classifier


def report_cached(system, entries, space, classifier, tag) -> MetricsReport:
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"report_{tag}_{system.config.config_hash()}.json"
    if path.exists():
        doc = json.loads(path.read_text())
        return MetricsReport(**doc)
    splits = split_corpus(entries, system.config.corpus.split_seed)
    report = evaluate_system(
        system,
        splits["test"],
        space,
        classifier,
        seed=EVAL_SEED,
    )
    path.write_text(json.dumps(report.to_dict(), indent=2))
    return report


@pytest.fixture(scope="session")
def desk_corpus():
    return build_corpus(full_desk_config(), ScaleHierarchy.default())


@pytest.fixture(scope="session")
def trained_system():
    return trained_system_cached(full_desk_config())


@pytest.fixture(scope="session")
def s1_system():
    return trained_system_cached(s1_desk_config())


@pytest.fixture(scope="session")
def metric_kit(trained_system, desk_corpus):
    return metric_kit_cached(trained_system, desk_corpus)


@pytest.fixture(scope="session")
def full_report(trained_system, desk_corpus, metric_kit):
    space, classifier = metric_kit
    return report_cached(trained_system, desk_corpus, space, classifier, "full")


@pytest.fixture(scope="session")
def s1_report(s1_system, desk_corpus, metric_kit):
    space, classifier = metric_kit
    return report_cached(s1_system, desk_corpus, space, classifier, "s1")
