"""Text-to-motion evaluation metrics over a desk-scale trained feature space.

Retrieval precision, Frechet feature distance, motion-text distance,
diversity, per-text multimodality, and label accuracy, plus the repeated
evaluation harness with confidence intervals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus import NormalizationStats, normalize
from .errors import ConfigurationError, InputError, ProtocolError, ShapeError
from .motion import MotionSequence
from .text_encoder import PAD_ID, Vocabulary, tokenize

RPRECISION_POOL = 32
DEFAULT_DIVERSITY_PAIRS = 300


class MotionFeatureNet(nn.Module):
    """GRU over normalized scale-1 features, projected to the metric space."""

    def __init__(self, feature_dim: int, out_dim: int, hidden: int = 128):
        super().__init__()
        self.gru = nn.GRU(feature_dim, hidden, batch_first=True)
        self.proj = nn.Linear(hidden, out_dim)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            feats, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, h = self.gru(packed)
        return self.proj(h[-1])


class TextFeatureNet(nn.Module):
    """GRU over token embeddings, projected to the metric space."""

    def __init__(self, vocab_size: int, out_dim: int, hidden: int = 128):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, hidden, padding_idx=PAD_ID)
        self.gru = nn.GRU(hidden, hidden, batch_first=True)
        self.proj = nn.Linear(hidden, out_dim)

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embed(token_ids), lengths.cpu(), batch_first=True,
            enforce_sorted=False,
        )
        _, h = self.gru(packed)
        return self.proj(h[-1])


@dataclass
class FeatureSpace:
    """Frozen motion/text extractors sharing one metric space."""

    motion_extractor: MotionFeatureNet
    text_extractor: TextFeatureNet
    vocab: Vocabulary
    stats: NormalizationStats
    dim: int

    @torch.no_grad()
    def motion_features(self, motions: list[MotionSequence]) -> np.ndarray:
        self.motion_extractor.eval()
        lengths = torch.tensor([m.num_frames for m in motions])
        width = int(lengths.max())
        batch = torch.zeros(len(motions), width, self.stats.mean.shape[0])
        for i, motion in enumerate(motions):
            normed = normalize(motion, self.stats)
            batch[i, : motion.num_frames] = torch.from_numpy(normed.features)
        return self.motion_extractor(batch, lengths).numpy()

    @torch.no_grad()
    def text_features(self, texts: list[str]) -> np.ndarray:
        self.text_extractor.eval()
        rows = [self.vocab.encode(tokenize(t)) or [PAD_ID] for t in texts]
        lengths = torch.tensor([max(len(r), 1) for r in rows])
        width = int(lengths.max())
        batch = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, row in enumerate(rows):
            batch[i, : len(row)] = torch.tensor(row)
        return self.text_extractor(batch, lengths).numpy()


def train_extractors(
    entries,
    stats: NormalizationStats,
    feature_dim: int = 64,
    seed: int = 0,
    epochs: int = 60,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> FeatureSpace:
    """Symmetric contrastive training of the motion/text extractor pair."""
    if len(entries) < 50:
        raise ConfigurationError(
            f"extractor training needs >= 50 entries, got {len(entries)}"
        )
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_texts(t for e in entries for t in e.texts)
    motion_net = MotionFeatureNet(stats.mean.shape[0], feature_dim)
    text_net = TextFeatureNet(len(vocab), feature_dim)
    optimizer = torch.optim.AdamW(
        list(motion_net.parameters()) + list(text_net.parameters()), lr=lr
    )
    space = FeatureSpace(motion_net, text_net, vocab, stats, feature_dim)

    lengths = torch.tensor([e.motion.num_frames for e in entries])
    width = int(lengths.max())
    feats = torch.zeros(len(entries), width, stats.mean.shape[0])
    for i, e in enumerate(entries):
        feats[i, : e.motion.num_frames] = torch.from_numpy(
            normalize(e.motion, stats).features
        )

    temperature = 0.07
    for _ in range(epochs):
        order = rng.permutation(len(entries))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            texts = [
                entries[i].texts[rng.integers(len(entries[i].texts))] for i in idx
            ]
            rows = [vocab.encode(tokenize(t)) for t in texts]
            t_len = torch.tensor([len(r) for r in rows])
            tokens = torch.full((len(rows), int(t_len.max())), PAD_ID, dtype=torch.long)
            for i, row in enumerate(rows):
                tokens[i, : len(row)] = torch.tensor(row)

            m = motion_net(feats[idx], lengths[idx])
            t = text_net(tokens, t_len)
            m_n = nn.functional.normalize(m, dim=-1)
            t_n = nn.functional.normalize(t, dim=-1)
            logits = m_n @ t_n.T / temperature
            labels = torch.arange(len(idx))
            loss = 0.5 * (
                nn.functional.cross_entropy(logits, labels)
                + nn.functional.cross_entropy(logits.T, labels)
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    motion_net.eval()
    text_net.eval()
    return space


# ---------------------------------------------------------------------------
# metric functions (pure numpy over extracted features)


def r_precision(
    motion_feats: np.ndarray,
    text_feats: np.ndarray,
    k: int,
    pool_size: int = RPRECISION_POOL,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of motions whose matched text ranks top-k among ``pool_size``
    candidates (1 matched + ``pool_size - 1`` mismatched)."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    n = motion_feats.shape[0]
    if text_feats.shape[0] != n:
        raise ProtocolError("motions and texts must be paired")
    if n < pool_size:
        raise ProtocolError(f"need >= {pool_size} paired samples, got {n}")
    rng = rng or np.random.default_rng(0)
    hits = 0
    for i in range(n):
        others = np.delete(np.arange(n), i)
        mismatched = rng.choice(others, size=pool_size - 1, replace=False)
        candidates = np.concatenate([[i], mismatched])
        dists = np.linalg.norm(text_feats[candidates] - motion_feats[i], axis=1)
        rank = int(np.argsort(dists, kind="stable").tolist().index(0))
        hits += rank < k
    return hits / n


def _eigh_with_jitter(mat: np.ndarray, eps: float):
    """Symmetric eigendecomposition, retried with growing diagonal jitter.

    LAPACK can fail to converge on badly conditioned covariances (e.g. from
    degenerate feature sets); a relative-scale ridge restores convergence
    while perturbing well-behaved inputs by at most ~eps.
    """
    sym = (mat + mat.T) / 2.0
    scale = max(float(np.abs(np.diag(sym)).max()), 1.0)
    for attempt in range(4):
        try:
            return np.linalg.eigh(sym)
        except np.linalg.LinAlgError:
            sym = sym + eps * scale * 10.0 ** attempt * np.eye(sym.shape[0])
    return np.linalg.eigh(sym)


def fid(real_feats: np.ndarray, gen_feats: np.ndarray, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The matrix square root uses an eigendecomposition of the symmetrized
    product; tiny negative eigenvalues from numerical error are clamped at 0.
    """
    real_feats = np.asarray(real_feats, dtype=np.float64)
    gen_feats = np.asarray(gen_feats, dtype=np.float64)
    if real_feats.ndim != 2 or gen_feats.ndim != 2:
        raise ShapeError("feature sets must be 2-D")
    if real_feats.shape[1] != gen_feats.shape[1]:
        raise ShapeError(
            f"dimension mismatch {real_feats.shape[1]} vs {gen_feats.shape[1]}"
        )
    if not (np.isfinite(real_feats).all() and np.isfinite(gen_feats).all()):
        raise InputError("feature sets must be finite")
    d = real_feats.shape[1]
    mu_r, mu_g = real_feats.mean(axis=0), gen_feats.mean(axis=0)
    sigma_r = np.cov(real_feats, rowvar=False)
    sigma_g = np.cov(gen_feats, rowvar=False)
    if real_feats.shape[0] <= d:
        sigma_r = sigma_r + eps * np.eye(d)
    if gen_feats.shape[0] <= d:
        sigma_g = sigma_g + eps * np.eye(d)

    # sqrt(sigma_r) via eigendecomposition, then sqrt of the symmetric product
    vals_r, vecs_r = _eigh_with_jitter(sigma_r, eps)
    root_r = (vecs_r * np.sqrt(np.clip(vals_r, 0.0, None))) @ vecs_r.T
    product = root_r @ sigma_g @ root_r
    vals_p, _ = _eigh_with_jitter((product + product.T) / 2.0, eps)
    tr_sqrt = np.sqrt(np.clip(vals_p, 0.0, None)).sum()

    diff = mu_r - mu_g
    value = diff @ diff + np.trace(sigma_r) + np.trace(sigma_g) - 2.0 * tr_sqrt
    return float(max(value, 0.0))


def mm_dist(motion_feats: np.ndarray, text_feats: np.ndarray) -> float:
    """Mean Euclidean distance between paired motion and text features."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if motion_feats.shape != text_feats.shape:
        raise ProtocolError("mm_dist requires paired features of equal shape")
    return float(np.linalg.norm(motion_feats - text_feats, axis=1).mean())


def diversity(
    feats: np.ndarray,
    num_pairs: int = DEFAULT_DIVERSITY_PAIRS,
    rng: np.random.Generator | None = None,
) -> tuple[float, bool]:
    """Mean feature distance over random disjoint pairs.

    Returns (value, with_replacement): sets smaller than ``2 * num_pairs``
    fall back to sampling with replacement and flag it.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    if n < 2:
        raise ProtocolError("diversity needs at least 2 samples")
    # canonical sort makes the pair sampling permutation-invariant
    order = np.lexsort(feats.T[::-1])
    feats = feats[order]
    rng = rng or np.random.default_rng(0)
    with_replacement = n < 2 * num_pairs
    if with_replacement:
        first = rng.integers(n, size=num_pairs)
        second = rng.integers(n, size=num_pairs)
        resample = first == second
        while resample.any():
            second[resample] = rng.integers(n, size=int(resample.sum()))
            resample = first == second
    else:
        chosen = rng.choice(n, size=2 * num_pairs, replace=False)
        first, second = chosen[:num_pairs], chosen[num_pairs:]
    value = float(np.linalg.norm(feats[first] - feats[second], axis=1).mean())
    return value, with_replacement


def mmodality(
    per_text_feats: dict[str, np.ndarray],
    num_pairs: int = 10,
    rng: np.random.Generator | None = None,
) -> float:
    """Within-text diversity, averaged over texts."""
    if not per_text_feats:
        raise ProtocolError("mmodality needs at least one text group")
    rng = rng or np.random.default_rng(0)
    values = [
        diversity(feats, num_pairs, rng)[0] for feats in per_text_feats.values()
    ]
    return float(np.mean(values))


class ActionClassifier(nn.Module):
    def __init__(self, feature_dim: int, labels: tuple[str, ...], hidden: int = 128):
        super().__init__()
        self.labels = labels
        self.gru = nn.GRU(feature_dim, hidden, batch_first=True)
        self.head = nn.Linear(hidden, len(labels))

    def forward(self, feats, lengths):
        packed = nn.utils.rnn.pack_padded_sequence(
            feats, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, h = self.gru(packed)
        return self.head(h[-1])


def train_classifier(
    entries,
    stats: NormalizationStats,
    seed: int = 0,
    epochs: int = 60,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> ActionClassifier:
    labels = tuple(sorted({e.action_label for e in entries}))
    if len(labels) < 2:
        raise ConfigurationError("classifier needs at least 2 label classes")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = ActionClassifier(stats.mean.shape[0], labels)
    optimizer = torch.optim.AdamW(net.parameters(), lr=lr)

    lengths = torch.tensor([e.motion.num_frames for e in entries])
    width = int(lengths.max())
    feats = torch.zeros(len(entries), width, stats.mean.shape[0])
    targets = torch.tensor([labels.index(e.action_label) for e in entries])
    for i, e in enumerate(entries):
        feats[i, : e.motion.num_frames] = torch.from_numpy(
            normalize(e.motion, stats).features
        )
    for _ in range(epochs):
        order = rng.permutation(len(entries))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            logits = net(feats[idx], lengths[idx])
            loss = nn.functional.cross_entropy(logits, targets[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()
    return net


@torch.no_grad()
def classify(
    classifier: ActionClassifier,
    stats: NormalizationStats,
    motions: list[MotionSequence],
) -> list[str]:
    classifier.eval()
    lengths = torch.tensor([m.num_frames for m in motions])
    width = int(lengths.max())
    feats = torch.zeros(len(motions), width, stats.mean.shape[0])
    for i, m in enumerate(motions):
        feats[i, : m.num_frames] = torch.from_numpy(normalize(m, stats).features)
    preds = classifier(feats, lengths).argmax(dim=-1)
    return [classifier.labels[int(p)] for p in preds]


def accuracy(predicted_labels, conditioning_labels, known_labels) -> float:
    """Fraction of generations whose predicted label matches the condition."""
    if len(predicted_labels) != len(conditioning_labels):
        raise ProtocolError("label lists must be paired")
    unseen = set(conditioning_labels) - set(known_labels)
    if unseen:
        raise ProtocolError(f"labels never seen by the classifier: {sorted(unseen)}")
    matches = sum(p == c for p, c in zip(predicted_labels, conditioning_labels))
    return matches / len(predicted_labels)


def repeat_evaluation(metric_fn, repeats: int = 20) -> dict:
    """Run a seeded metric ``repeats`` times; mean with a normal-approx 95% CI."""
    if repeats < 1:
        raise InputError("repeats must be >= 1")
    values = np.array([float(metric_fn(rep)) for rep in range(repeats)])
    mean = float(values.mean())
    if repeats == 1:
        return {"mean": mean, "ci95": 0.0, "repeats": repeats}
    sem = float(values.std(ddof=1) / np.sqrt(repeats))
    return {"mean": mean, "ci95": 1.96 * sem, "repeats": repeats}
