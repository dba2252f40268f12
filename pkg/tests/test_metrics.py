"""Pure-numpy metric functions and the extractor/classifier training paths."""
import numpy as np
import pytest

from motioncascade.errors import (
    ConfigurationError,
    InputError,
    ProtocolError,
    ShapeError,
)
from motioncascade.metrics import (
    accuracy,
    diversity,
    fid,
    mm_dist,
    mmodality,
    r_precision,
    repeat_evaluation,
)


# -- Frechet distance --------------------------------------------------------


def test_fid_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((500, 16))
    assert fid(feats, feats) < 1e-6


def test_fid_unit_mean_shift():
    # equal-covariance Gaussians a unit mean apart have squared Frechet
    # distance ||mu1 - mu2||^2 = 1
    rng = np.random.default_rng(1)
    a = rng.standard_normal((10_000, 8))
    b = rng.standard_normal((10_000, 8))
    b[:, 0] += 1.0
    value = fid(a, b)
    assert abs(value - 1.0) < 0.05


def test_fid_analytic_mean_only():
    # identical deterministic covariances, mean offset d: FID = ||d||^2
    rng = np.random.default_rng(2)
    base = rng.standard_normal((2000, 4))
    shift = np.array([1.0, -2.0, 0.5, 0.0])
    value = fid(base, base + shift)
    assert abs(value - float(shift @ shift)) < 1e-8


def test_fid_symmetry_and_nonnegativity():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((300, 6)) * 2.0
    b = rng.standard_normal((300, 6)) + 0.5
    ab, ba = fid(a, b), fid(b, a)
    assert abs(ab - ba) < 1e-8
    assert ab >= 0.0


def test_fid_small_sample_regularization():
    # fewer samples than dimensions: rank-deficient covariance must not
    # produce NaN
    rng = np.random.default_rng(4)
    a = rng.standard_normal((10, 32))
    b = rng.standard_normal((10, 32))
    assert np.isfinite(fid(a, b))


def test_fid_shape_checks():
    with pytest.raises(ShapeError):
        fid(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(ShapeError):
        fid(np.zeros(5), np.zeros((5, 4)))


# -- retrieval precision -----------------------------------------------------


def test_r_precision_perfect_alignment():
    # motion features equal to their text features always rank first
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((64, 8)) * 10
    for k in (1, 2, 3):
        assert r_precision(feats, feats, k, rng=rng) == 1.0


def test_r_precision_chance_level():
    # unrelated features rank the matched text uniformly: top-k hits k/32
    rng = np.random.default_rng(1)
    motions = rng.standard_normal((2000, 8))
    texts = rng.standard_normal((2000, 8))
    for k in (1, 2, 3):
        value = r_precision(motions, texts, k, rng=np.random.default_rng(k))
        assert abs(value - k / 32) < 0.02


def test_r_precision_monotone_in_k():
    rng = np.random.default_rng(2)
    motions = rng.standard_normal((200, 8))
    texts = motions + rng.standard_normal((200, 8))
    values = [
        r_precision(motions, texts, k, rng=np.random.default_rng(0))
        for k in (1, 2, 3)
    ]
    assert values[0] <= values[1] <= values[2]


def test_r_precision_pool_protocol():
    feats = np.zeros((10, 4))
    with pytest.raises(ProtocolError):
        r_precision(feats, feats, 1)
    with pytest.raises(ProtocolError):
        r_precision(np.zeros((40, 4)), np.zeros((41, 4)), 1)


# -- distances ---------------------------------------------------------------


def test_mm_dist_trivials():
    a = np.zeros((5, 4))
    assert mm_dist(a, a) == 0.0
    b = np.zeros((5, 4))
    b[:, 0] = 3.0
    assert abs(mm_dist(a, b) - 3.0) < 1e-12
    with pytest.raises(ProtocolError):
        mm_dist(np.zeros((5, 4)), np.zeros((4, 4)))


def test_mm_dist_random_unit_vectors():
    # independent unit-norm features sit about sqrt(2) apart in expectation
    rng = np.random.default_rng(0)
    a = rng.standard_normal((20_000, 64))
    b = rng.standard_normal((20_000, 64))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    assert abs(mm_dist(a, b) - np.sqrt(2.0)) < 0.01


# -- diversity ---------------------------------------------------------------


def test_diversity_constant_set_is_zero():
    feats = np.ones((700, 8))
    value, flagged = diversity(feats, 300, np.random.default_rng(0))
    assert value == 0.0
    assert not flagged


def test_diversity_standard_normal_expectation():
    # pairwise differences of N(0, I_128) draws have expected norm near
    # sqrt(2 * 128)
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((5000, 128))
    value, flagged = diversity(feats, 2000, np.random.default_rng(2))
    assert abs(value - np.sqrt(256.0)) < 0.5
    assert not flagged


def test_diversity_permutation_invariant():
    rng = np.random.default_rng(3)
    feats = rng.standard_normal((100, 4))
    a, _ = diversity(feats, 40, np.random.default_rng(5))
    b, _ = diversity(feats[::-1].copy(), 40, np.random.default_rng(5))
    assert a == b


def test_diversity_small_set_flags_replacement():
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((10, 4))
    value, flagged = diversity(feats, 300, np.random.default_rng(0))
    assert flagged
    assert value > 0
    with pytest.raises(ProtocolError):
        diversity(feats[:1], 10)


def test_mmodality_averages_group_diversities():
    groups = {
        "a": np.ones((20, 4)),
        "b": np.ones((20, 4)),
    }
    assert mmodality(groups, 5, np.random.default_rng(0)) == 0.0
    with pytest.raises(ProtocolError):
        mmodality({})


# -- label accuracy ----------------------------------------------------------


def test_accuracy_counts_matches():
    known = ("jump", "run", "walk")
    assert accuracy(["walk", "run"], ["walk", "jump"], known) == 0.5
    assert accuracy(["walk"], ["walk"], known) == 1.0


def test_accuracy_protocol_errors():
    with pytest.raises(ProtocolError):
        accuracy(["walk"], ["walk", "run"], ("walk", "run"))
    with pytest.raises(ProtocolError):
        accuracy(["walk"], ["fly"], ("walk", "run"))


# -- repeat harness ----------------------------------------------------------


def test_repeat_evaluation_constant_metric():
    out = repeat_evaluation(lambda rep: 0.75, repeats=10)
    assert out["mean"] == 0.75
    assert out["ci95"] == 0.0
    assert out["repeats"] == 10


def test_repeat_evaluation_ci_width():
    # alternating 0/1 values: sd = 0.527 for n=10, ci = 1.96 * sd / sqrt(10)
    out = repeat_evaluation(lambda rep: float(rep % 2), repeats=10)
    values = np.array([float(r % 2) for r in range(10)])
    expected = 1.96 * values.std(ddof=1) / np.sqrt(10)
    assert abs(out["ci95"] - expected) < 1e-12
    assert out["mean"] == 0.5


def test_repeat_evaluation_single_run():
    out = repeat_evaluation(lambda rep: 2.0, repeats=1)
    assert out == {"mean": 2.0, "ci95": 0.0, "repeats": 1}
    with pytest.raises(InputError):
        repeat_evaluation(lambda rep: 0.0, repeats=0)
