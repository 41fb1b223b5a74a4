import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unctrack.exceptions import DomainError
from unctrack.losses import LossWeights, box_iou, ciou_alpha, ciou_loss, combine, l1_loss, stage1_loss, stage1_terms
from unctrack.numerics import Tensor, grad_check
from unctrack.numerics.autodiff import Tape, as_tensor, backward
from unctrack.uld import BoundingBox, CornerPrediction, uncertainty_loss

from .oracles import box_iou_naive


def ciou_reference(b, g):
    """Direct scalar evaluation of the complete-IoU loss."""
    iou = box_iou_naive(b, g)
    rho2 = ((b[0] + b[2] - g[0] - g[2]) ** 2 + (b[1] + b[3] - g[1] - g[3]) ** 2) / 4
    c2 = (max(b[2], g[2]) - min(b[0], g[0])) ** 2 + (max(b[3], g[3]) - min(b[1], g[1])) ** 2
    v = 4 / math.pi ** 2 * (math.atan((g[2] - g[0]) / (g[3] - g[1])) - math.atan((b[2] - b[0]) / (b[3] - b[1]))) ** 2
    alpha = v / ((1 - iou) + v) if v > 0 else 0.0
    return 1 - iou + rho2 / c2 + alpha * v


def random_box(rng, lo=0.0, hi=40.0):
    xy = rng.uniform(lo, hi, 2)
    return np.concatenate([xy, xy + rng.uniform(2, 15, 2)])


def test_ciou_examples():
    box = np.array([1.0, 2.0, 5.0, 9.0])
    assert abs(ciou_loss(box, box).item()) <= 1e-12
    assert abs(ciou_loss(np.array([1.0, 1.0, 3.0, 3.0]), BoundingBox(0, 0, 4, 4)).item() - 0.75) <= 1e-12


def test_ciou_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(200):
        b, g = random_box(rng), random_box(rng)
        assert abs(ciou_loss(b, g).item() - ciou_reference(b, g)) <= 1e-8


def test_ciou_monotone_under_translation():
    gt = np.array([10.0, 10.0, 20.0, 16.0])
    vals = [ciou_loss(gt + np.array([s, 0, s, 0]), gt).item() for s in np.linspace(0, 30, 301)]
    assert np.all(np.diff(vals) > 0)


def test_ciou_rejects_zero_area_gt():
    with pytest.raises(DomainError):
        ciou_loss(np.array([0.0, 0.0, 1.0, 1.0]), np.array([2.0, 2.0, 2.0, 5.0]))


def test_ciou_clamps_inverted_prediction():
    val = ciou_loss(np.array([5.0, 5.0, 3.0, 3.0]), np.array([0.0, 0.0, 4.0, 4.0])).item()
    assert np.isfinite(val)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ciou_properties(seed):
    rng = np.random.default_rng(seed)
    g = random_box(rng)
    b = g + rng.normal(0, 2, 4)
    b[2:] = np.maximum(b[2:], b[:2] + 0.5)
    if box_iou(b, g) > 0:
        assert ciou_loss(b, g).item() >= 0
    # shared centre and aspect: only the overlap term remains
    cx, cy = (g[0] + g[2]) / 2, (g[1] + g[3]) / 2
    s = rng.uniform(0.3, 3.0)
    w, h = (g[2] - g[0]) * s, (g[3] - g[1]) * s
    scaled = np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
    assert abs(ciou_loss(scaled, g).item() - (1 - box_iou(scaled, g))) <= 1e-9


def test_ciou_alpha_matches_internal_constant():
    rng = np.random.default_rng(1)
    b, g = random_box(rng), random_box(rng)
    assert abs(ciou_loss(b, g).item() - ciou_loss(b, g, ciou_alpha(b, g)).item()) <= 1e-12


def test_l1_examples():
    rng = np.random.default_rng(2)
    b, g = random_box(rng), random_box(rng)
    assert l1_loss(b, b).item() == 0.0
    assert abs(l1_loss(b + 3.2, b, scale=64.0).item() - 3.2 / 64) <= 1e-12
    assert abs(l1_loss(b, g, scale=16.0).item() - np.mean(np.abs(b - g)) / 16) <= 1e-12


def test_weight_validation():
    assert LossWeights() == LossWeights(2.0, 5.0, 2.0)
    with pytest.raises(DomainError):
        LossWeights(-1.0, 1.0, 1.0)


def _prediction(mu, sigma, size=64.0):
    return CornerPrediction(as_tensor(mu), as_tensor(sigma), None, None, size)


def test_stage1_examples():
    gt = np.array([10.0, 12.0, 30.0, 40.0])
    assert abs(stage1_loss(_prediction(gt, np.ones(4)), gt).item()) <= 1e-12
    assert abs(combine((0.1, 0.02, 0.3), LossWeights(2, 5, 2)) - 0.9) <= 1e-12


def test_stage1_is_weighted_sum_of_terms():
    rng = np.random.default_rng(3)
    gt = random_box(rng)
    pred = _prediction(gt + rng.normal(0, 2, 4), rng.uniform(0.5, 3, 4))
    ciou, l1, unc = (t.item() for t in stage1_terms(pred, gt))
    assert abs(unc - uncertainty_loss(pred.mu, pred.sigma, gt).item()) <= 1e-12
    assert abs(stage1_loss(pred, gt).item() - (2 * ciou + 5 * l1 + 2 * unc)) <= 1e-12


@pytest.mark.parametrize("zeroed", ["alpha", "beta", "gamma"])
def test_zeroing_a_weight_removes_its_gradient(zeroed):
    rng = np.random.default_rng(4)
    gt = random_box(rng)
    mu0, sigma0 = gt + rng.normal(0, 2, 4), rng.uniform(0.5, 3, 4)
    alpha_v = ciou_alpha(mu0, gt)

    def grads(weights, which=None):
        mu, sigma = Tensor(mu0, requires_grad=True), Tensor(sigma0, requires_grad=True)
        with Tape() as tape:
            terms = stage1_terms(_prediction(mu, sigma), gt, alpha_v)
            out = combine(terms, weights) if which is None else terms[which]
        g = backward(tape, out)
        return np.concatenate([g[mu], g[sigma]])

    full = grads(LossWeights())
    kw = {"alpha": 2.0, "beta": 5.0, "gamma": 2.0}
    idx = list(kw).index(zeroed)
    removed = grads(LossWeights(**{**kw, zeroed: 0.0}))
    np.testing.assert_allclose(full - removed, kw[zeroed] * grads(LossWeights(), idx), atol=1e-12)
    # and the remaining gradient is what the finite-difference oracle sees
    w = LossWeights(**{**kw, zeroed: 0.0})
    f = lambda t: combine(stage1_terms(_prediction(t, sigma0), gt, alpha_v), w)  # noqa: E731
    assert grad_check(f, mu0).max_rel_error <= 1e-6


def test_stage1_grad_check_50_configurations():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        gt = random_box(rng, 5, 30)
        mu0 = gt + rng.normal(0, 2, 4)
        mu0[2:] = np.maximum(mu0[2:], mu0[:2] + 1.0)
        sigma0 = rng.uniform(0.5, 3, 4)
        alpha_v = ciou_alpha(mu0, gt)
        worst = max(worst, grad_check(lambda t: stage1_loss(_prediction(t, sigma0), gt, alpha_v=alpha_v),
                                      mu0).max_rel_error)
        worst = max(worst, grad_check(lambda t: stage1_loss(_prediction(mu0, t), gt, alpha_v=alpha_v),
                                      sigma0).max_rel_error)
    assert worst <= 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-20, 20), st.integers(-20, 20))
def test_stage1_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    gt = random_box(rng)
    mu = gt + rng.normal(0, 2, 4)
    sigma = rng.uniform(0.5, 3, 4)
    shift = np.array([dx, dy, dx, dy], dtype=float)
    a = stage1_loss(_prediction(mu, sigma), gt).item()
    b = stage1_loss(_prediction(mu + shift, sigma), gt + shift).item()
    assert abs(a - b) <= 1e-9


def test_box_iou_matches_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(500):
        a, b = random_box(rng), random_box(rng)
        assert abs(box_iou(a, b) - box_iou_naive(a, b)) <= 1e-12
