"""End-to-end evaluation harness: generate, extract features, score, report."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProtocolError
from .metrics import (
    FeatureSpace,
    accuracy,
    classify,
    diversity,
    fid,
    mm_dist,
    mmodality,
    r_precision,
    train_classifier,
    train_extractors,
)

MMODALITY_TEXTS = 4
MMODALITY_SAMPLES = 5


def corpus_hash(entries) -> str:
    digest = hashlib.sha256()
    for entry in entries:
        digest.update(entry.entry_id.encode())
        digest.update(entry.motion.features.tobytes())
    return digest.hexdigest()[:16]


@dataclass
class MetricsReport:
    metrics: dict[str, dict]
    config_hash: str
    corpus_hash: str
    seed: int
    repeats: int
    notes: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"config_hash: {self.config_hash}",
            f"corpus_hash: {self.corpus_hash}",
            f"seed: {self.seed}",
            f"repeats: {self.repeats}",
            "",
            f"{'metric':<16}{'mean':>12}{'ci95':>12}",
        ]
        for name, entry in self.metrics.items():
            lines.append(f"{name:<16}{entry['mean']:>12.4f}{entry['ci95']:>12.4f}")
        for note in self.notes:
            lines.append(f"# {note}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "config_hash": self.config_hash,
            "corpus_hash": self.corpus_hash,
            "seed": self.seed,
            "repeats": self.repeats,
            "notes": self.notes,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2))
        path.with_suffix(".txt").write_text(self.to_text() + "\n")


def build_feature_space(
    system, train_entries, seed: int = 0
) -> tuple[FeatureSpace, object]:
    """Train the metric extractors and the action classifier on real data."""
    cfg = system.config.eval
    space = train_extractors(
        train_entries,
        system.stats[1],
        feature_dim=cfg.feature_dim,
        seed=seed,
        epochs=cfg.extractor_epochs,
    )
    classifier = train_classifier(
        train_entries,
        system.stats[1],
        seed=seed,
        epochs=cfg.classifier_epochs,
    )
    return space, classifier


def evaluate_system(
    system,
    test_entries,
    space: FeatureSpace,
    classifier,
    repeats: int | None = None,
    seed: int = 0,
    num_samples: int | None = None,
    sampler: str | None = None,
) -> MetricsReport:
    """All six metrics, repeated with fresh seeds, mean with 95% CI."""
    cfg = system.config.eval
    repeats = repeats if repeats is not None else cfg.repeats
    num_samples = num_samples or min(len(test_entries), 48)
    if num_samples < 32:
        raise ProtocolError(
            f"need >= 32 test entries for retrieval, got {num_samples}"
        )
    known_labels = classifier.labels

    per_metric: dict[str, list[float]] = {
        name: []
        for name in (
            "r_precision_top1",
            "r_precision_top2",
            "r_precision_top3",
            "fid",
            "mm_dist",
            "diversity",
            "mmodality",
            "accuracy",
        )
    }
    notes: list[str] = []
    for rep in range(repeats):
        rng = np.random.default_rng(seed * 1000 + rep)
        chosen = rng.choice(len(test_entries), size=num_samples, replace=False)
        entries = [test_entries[i] for i in chosen]
        texts = [e.texts[int(rng.integers(len(e.texts)))] for e in entries]
        labels = [e.action_label for e in entries]

        generated = system.generate_batch(
            texts, seed=seed * 1000 + rep, sampler=sampler
        )
        real_feats = space.motion_features([e.motion for e in entries])
        gen_feats = space.motion_features(generated)
        text_feats = space.text_features(texts)

        for k in (1, 2, 3):
            per_metric[f"r_precision_top{k}"].append(
                r_precision(gen_feats, text_feats, k, rng=rng)
            )
        per_metric["fid"].append(fid(real_feats, gen_feats))
        per_metric["mm_dist"].append(mm_dist(gen_feats, text_feats))
        div, flagged = diversity(gen_feats, cfg.diversity_pairs, rng)
        per_metric["diversity"].append(div)
        if flagged and rep == 0:
            notes.append("diversity sampled pairs with replacement (small set)")

        mm_texts = [texts[i] for i in range(min(MMODALITY_TEXTS, len(texts)))]
        groups = {}
        for j, text in enumerate(mm_texts):
            repeats_for_text = system.generate_batch(
                [text] * MMODALITY_SAMPLES,
                seed=seed * 1000 + rep * 31 + j + 1,
                sampler=sampler,
            )
            groups[text] = space.motion_features(repeats_for_text)
        per_metric["mmodality"].append(mmodality(groups, rng=rng))

        predictions = classify(classifier, system.stats[1], generated)
        per_metric["accuracy"].append(accuracy(predictions, labels, known_labels))

    metrics = {}
    for name, values in per_metric.items():
        arr = np.array(values)
        ci = (
            1.96 * float(arr.std(ddof=1) / np.sqrt(len(arr)))
            if len(arr) > 1
            else 0.0
        )
        metrics[name] = {
            "mean": float(arr.mean()),
            "ci95": ci,
            "repeats": len(arr),
        }
    return MetricsReport(
        metrics=metrics,
        config_hash=system.config.config_hash(),
        corpus_hash=corpus_hash(test_entries),
        seed=seed,
        repeats=repeats,
        notes=notes,
    )
