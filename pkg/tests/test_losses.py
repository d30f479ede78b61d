import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynbatch.data import VolumeSample, partition_batches
from dynbatch.losses import (
    LossConfig,
    LossDomainError,
    batch_conditional_loss,
    false_positive_focal_loss,
    focal_loss,
    loss_gradient,
    mean_false_positive_loss,
)
from dynbatch.numerics import ShapeError, finite_diff_grad, make_rng, relative_error

import oracles

FOCAL = LossConfig(variant="focal")
HYBRID = LossConfig(variant="hybrid_focal", c_weight=10.0)
MEANFP = LossConfig(variant="mean_fp_focal")

# hand evaluation: 0.8 * 0.5^2 * ln 2, 0.2 * 0.5^2 * ln 2, 0.5^2 * ln 2
FOCAL_POS = 0.13862943611198905
FOCAL_NEG = 0.034657359027997264
FPFL_HALF = 0.17328679513998632


def random_instance(seed, n=12, k=4, absent=()):
    rng = make_rng(seed)
    cls = rng.integers(0, k, size=n)
    for a in absent:
        cls[cls == a] = 0
    target = np.eye(k)[cls]
    pred = rng.uniform(0.02, 0.98, size=(n, k))
    return target, pred


def test_frozen_constants():
    assert math.isclose(FOCAL_POS, 0.8 * 0.25 * math.log(2), rel_tol=1e-15)
    assert math.isclose(FOCAL_NEG, 0.2 * 0.25 * math.log(2), rel_tol=1e-15)
    assert math.isclose(FPFL_HALF, 0.25 * math.log(2), rel_tol=1e-15)


def test_focal_positive_voxel():
    assert focal_loss([[1.0]], [[0.5]], FOCAL).total == pytest.approx(0.138629, abs=1e-6)
    assert focal_loss([[1.0]], [[0.5]], FOCAL).total == pytest.approx(FOCAL_POS, abs=1e-12)


def test_focal_negative_voxel():
    assert focal_loss([[0.0]], [[0.5]], FOCAL).total == pytest.approx(FOCAL_NEG, abs=1e-12)


def test_focal_perfect_prediction():
    target = np.eye(4)[[0, 1, 2, 3, 0]]
    total = focal_loss(target, target, FOCAL).total
    assert 0.0 <= total <= 4 * -math.log1p(-FOCAL.epsilon)


def test_fpfl_half():
    assert false_positive_focal_loss([[0.0]], [[0.5]], FOCAL).total == pytest.approx(FPFL_HALF, abs=1e-12)


def test_fpfl_all_positive_is_zero():
    assert false_positive_focal_loss(np.ones((5, 2)), np.full((5, 2), 0.3), FOCAL).total == 0.0


def test_fpfl_no_false_positive():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = np.array([[0.7, 0.0], [0.0, 0.9]])
    assert false_positive_focal_loss(y, p, FOCAL).total == pytest.approx(0.0, abs=1e-20)


def test_mean_fp_hand():
    y = np.array([0, 0, 1, 1.0])[:, None]
    p = np.array([0.5, 0.25, 0.9, 0.1])[:, None]
    assert mean_false_positive_loss(y, p).total == pytest.approx(0.1875, abs=1e-15)


def test_mean_fp_exact_and_maximal():
    y = np.eye(3)[[0, 1, 2]]
    assert mean_false_positive_loss(y, y).total == 0.0
    assert mean_false_positive_loss(np.zeros((4, 1)), np.ones((4, 1))).total == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_losses_match_scalar_oracle(seed):
    y, p = random_instance(seed)
    c = FOCAL
    ys, ps = y.tolist(), p.tolist()
    exp, per = oracles.reduce_channels(ys, ps, lambda a, b: oracles.focal_scalar(a, b, c.alpha_fg, c.alpha_bg, c.gamma, c.epsilon))
    got = focal_loss(y, p, c)
    assert got.total == pytest.approx(exp, abs=1e-9)
    np.testing.assert_allclose(got.per_class, per, atol=1e-9)
    exp, _ = oracles.reduce_channels(ys, ps, lambda a, b: oracles.fp_focal_scalar(a, b, c.gamma, c.epsilon))
    assert false_positive_focal_loss(y, p, c).total == pytest.approx(exp, abs=1e-9)
    exp, _ = oracles.reduce_channels(ys, ps, oracles.mean_fp_scalar)
    assert mean_false_positive_loss(y, p).total == pytest.approx(exp, abs=1e-9)


def test_shape_and_domain_errors():
    with pytest.raises(ShapeError):
        focal_loss(np.zeros((2, 4)), np.zeros((2, 3)), FOCAL)
    with pytest.raises(LossDomainError):
        focal_loss([[1.0]], [[1.1]], FOCAL)
    with pytest.raises(LossDomainError):
        mean_false_positive_loss([[1.0]], [[-0.01]])
    # within the 1e-9 slack is accepted
    focal_loss([[1.0]], [[1.0 + 5e-10]], FOCAL)


def test_config_validation():
    for bad in (dict(gamma=-1), dict(alpha_fg=1.5), dict(c_weight=-1), dict(epsilon=0.01), dict(variant="dice")):
        with pytest.raises(ValueError):
            LossConfig(**bad)


# -- invariants ------------------------------------------------------------


@given(st.integers(0, 10_000), st.sampled_from(["focal", "fp", "mfp", "hybrid", "meanfp"]))
def test_non_negative(seed, which):
    y, p = random_instance(seed, n=6)
    p[0, 0] = 0.0
    p[1, 1] = 1.0
    fn = {
        "focal": lambda: focal_loss(y, p, FOCAL),
        "fp": lambda: false_positive_focal_loss(y, p, FOCAL),
        "mfp": lambda: mean_false_positive_loss(y, p),
        "hybrid": lambda: batch_conditional_loss(y, p, HYBRID),
        "meanfp": lambda: batch_conditional_loss(y, p, MEANFP),
    }[which]
    v = fn()
    assert v.total >= 0 and math.isfinite(v.total)


@given(st.integers(0, 10_000))
def test_reduction_identity(seed):
    y, p = random_instance(seed)
    reduced = LossConfig(alpha_fg=0.0, alpha_bg=1.0, variant="focal")
    assert abs(false_positive_focal_loss(y, p, FOCAL).total - focal_loss(y, p, reduced).total) <= 1e-12


@given(st.integers(0, 10_000))
def test_conditional_equals_focal_when_all_present(seed):
    y, p = random_instance(seed, n=8)
    y[:4] = np.eye(4)  # every class present
    for cfg in (HYBRID, MEANFP):
        v = batch_conditional_loss(y, p, cfg)
        assert v.fp_term_applied == []
        assert v.total == focal_loss(y, p, cfg).total


@given(st.integers(0, 10_000), st.sampled_from(["focal", "hybrid", "meanfp"]))
def test_voxel_permutation_invariance(seed, which):
    y, p = random_instance(seed, n=10, absent=(3,))
    perm = make_rng(seed + 1).permutation(len(y))
    fn = {
        "focal": lambda a, b: focal_loss(a, b, FOCAL),
        "hybrid": lambda a, b: batch_conditional_loss(a, b, HYBRID),
        "meanfp": lambda a, b: batch_conditional_loss(a, b, MEANFP),
    }[which]
    assert fn(y[perm], p[perm]).total == pytest.approx(fn(y, p).total, rel=1e-12)


# -- batch-conditional rule ------------------------------------------------


def test_hybrid_absent_et():
    y, p = random_instance(4, n=20, absent=(3,))
    y[:3] = np.eye(4)[:3]
    v = batch_conditional_loss(y, p, HYBRID)
    assert v.fp_term_applied == [3]
    assert v.per_class[3] == pytest.approx(10.0 * false_positive_focal_loss(y, p, HYBRID).per_class[3], rel=1e-14)
    f = focal_loss(y, p, HYBRID)
    assert v.per_class[:3] == f.per_class[:3]
    assert v.total == pytest.approx(sum(v.per_class), rel=1e-14)


def test_mean_fp_absent_et():
    y, p = random_instance(4, n=20, absent=(3,))
    y[:3] = np.eye(4)[:3]
    v = batch_conditional_loss(y, p, MEANFP)
    assert v.fp_term_applied == [3]
    assert v.per_class[3] == pytest.approx(mean_false_positive_loss(y, p).per_class[3], rel=1e-14)


def test_background_never_switched():
    y = np.zeros((5, 4))
    y[:, 1] = 1.0  # background channel absent too
    p = np.full((5, 4), 0.25)
    assert batch_conditional_loss(y, p, HYBRID).fp_term_applied == [2, 3]


def test_conditional_rejects_plain_focal():
    with pytest.raises(ValueError):
        batch_conditional_loss(np.eye(4), np.full((4, 4), 0.25), FOCAL)


def test_worked_example_155_slices():
    labels = np.zeros((155, 3, 3), dtype=np.uint8)
    labels[90:100, 1, 1] = 4
    labels[90:100, 0, 1] = 1
    labels[90:100, 1, 0] = 2
    sample = VolumeSample("P", np.zeros((155, 3, 3, 3)), labels)
    units = partition_batches(sample, 64)
    assert [u.slice_range for u in units] == [(0, 64), (64, 128), (128, 155)]
    p = np.full((3, 3, 4), 0.25)
    applied = [batch_conditional_loss(u.target, np.broadcast_to(p, u.target.shape), HYBRID).fp_term_applied for u in units]
    assert applied == [[1, 2, 3], [], [1, 2, 3]]


# -- gradients -------------------------------------------------------------


def _total(variant, cfg):
    return {
        "focal": lambda y, p: focal_loss(y, p, cfg).total,
        "fp_focal": lambda y, p: false_positive_focal_loss(y, p, cfg).total,
        "mean_fp": lambda y, p: mean_false_positive_loss(y, p).total,
        "hybrid_focal": lambda y, p: batch_conditional_loss(y, p, cfg).total,
        "mean_fp_focal": lambda y, p: batch_conditional_loss(y, p, cfg).total,
    }[variant]


@pytest.mark.parametrize("variant", ["focal", "fp_focal", "mean_fp", "hybrid_focal", "mean_fp_focal"])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(variant, seed):
    cfg = {"hybrid_focal": HYBRID, "mean_fp_focal": MEANFP}.get(variant, FOCAL)
    y, p = random_instance(seed, n=6, absent=(3,) if seed % 2 else ())
    f = _total(variant, cfg)
    fd = finite_diff_grad(lambda q: f(y, q), p, h=1e-6)
    assert relative_error(loss_gradient(y, p, cfg, variant), fd, floor=1e-6) < 1e-4


def test_gamma_one_gradient():
    cfg = LossConfig(gamma=1.0, variant="focal")
    y, p = random_instance(1, n=5)
    fd = finite_diff_grad(lambda q: focal_loss(y, q, cfg).total, p, h=1e-6)
    assert relative_error(loss_gradient(y, p, cfg), fd, floor=1e-6) < 1e-4


def test_fp_gradient_zero_on_positives():
    y, p = random_instance(2)
    g = loss_gradient(y, p, FOCAL, "fp_focal")
    assert np.all(g[y == 1] == 0.0)


def test_gradient_zero_beyond_clamp():
    y = np.array([[1.0, 0.0]])
    p = np.array([[1.0, 0.0]])
    assert np.all(loss_gradient(y, p, FOCAL, "focal") == 0.0)
    assert np.all(loss_gradient(y, p, FOCAL, "fp_focal") == 0.0)
