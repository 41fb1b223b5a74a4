import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unctrack.config import ModelConfig, preset
from unctrack.encoder import encode
from unctrack.exceptions import ContractError, DomainError
from unctrack.model import init_params
from unctrack.numerics import Tensor, grad_check
from unctrack.numerics.autodiff import Tape, backward
from unctrack.uld import (
    BoundingBox,
    decode_heads,
    predict_corners,
    read_sigma,
    soft_argmax,
    uncertainty_loss,
    uncertainty_loss_full,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_bounding_box_invariants():
    box = BoundingBox.from_cxcywh(5.0, 6.0, 4.0, 2.0)
    assert box.as_array().tolist() == [3.0, 5.0, 7.0, 7.0]
    assert box.center == (5.0, 6.0)
    with pytest.raises(DomainError):
        BoundingBox(3.0, 0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        BoundingBox(0.0, 0.0, np.nan, 1.0)


def test_decode_heads_extents_and_contracts():
    cfg = ModelConfig(template_size=8, search_size=16, patch_size=4, dim=8, depth=1, heads=2, head_channels=4,
                      cls_hidden=4)
    params = init_params(cfg, 0)
    f_s = Tensor(np.random.default_rng(0).normal(size=(8, 4, 4)))
    prob, unc = decode_heads(f_s, cfg, params)
    assert prob.shape == (2, 8, 8) and unc.shape == (4, 8, 8)
    np.testing.assert_allclose(prob.data.sum(axis=(-2, -1)), 1.0, atol=1e-9)
    assert np.all(unc.data > 0)


def test_full_grid_upsamples_to_36():
    cfg = preset("full").model
    assert cfg.search_grid == 18
    assert cfg.head_grid == 36


def test_soft_argmax_examples():
    one_hot = np.zeros((6, 6))
    one_hot[5, 3] = 1.0  # row y=5, column x=3
    np.testing.assert_allclose(soft_argmax(one_hot).data, [3.0, 5.0])
    np.testing.assert_allclose(soft_argmax(np.full((4, 4), 1 / 16)).data, [1.5, 1.5], atol=1e-12)
    peaks = np.zeros((3, 3))
    peaks[0, 0] = peaks[2, 2] = 0.5
    np.testing.assert_allclose(soft_argmax(peaks).data, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(soft_argmax(one_hot, stride=4).data, [14.0, 22.0])


def test_soft_argmax_rejects_unnormalised_maps():
    with pytest.raises(ContractError):
        soft_argmax(np.full((3, 3), 0.2))
    bad = np.full((2, 2), 0.25)
    bad[0, 0] = -0.25
    bad[1, 1] = 0.75
    with pytest.raises(ContractError):
        soft_argmax(bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7), st.integers(2, 7))
def test_soft_argmax_symmetric_map_returns_centre(seed, h, w):
    rng = np.random.default_rng(seed)
    m = rng.random((h, w))
    m = m + m[::-1, ::-1]  # point symmetric about the centre
    m /= m.sum()
    np.testing.assert_allclose(soft_argmax(m).data, [(w - 1) / 2, (h - 1) / 2], atol=1e-12)


def test_read_sigma_examples():
    const = np.full((4, 5, 5), 2.5)
    corners = np.array([[1.3, 0.2], [3.7, 4.0]])
    np.testing.assert_allclose(read_sigma(const, corners).data, 2.5, atol=1e-12)

    unc = np.random.default_rng(1).random((4, 5, 5))
    corners = np.array([[1.0, 2.0], [4.0, 3.0]])
    expected = [unc[0, 2, 1], unc[1, 2, 1], unc[2, 3, 4], unc[3, 3, 4]]
    np.testing.assert_allclose(read_sigma(unc, corners).data, expected, atol=1e-12)

    two = np.ones((4, 1, 2))
    two[..., 1] = 3.0
    np.testing.assert_allclose(read_sigma(two, np.array([[0.5, 0.0], [0.5, 0.0]])).data, 2.0, atol=1e-12)


def test_read_sigma_clamps_outside_corner(caplog):
    unc = np.random.default_rng(2).random((4, 3, 3))
    with caplog.at_level("WARNING"):
        out = read_sigma(unc, np.array([[-2.0, 1.0], [9.0, 9.0]])).data
    assert "clamped" in caplog.text
    np.testing.assert_allclose(out, [unc[0, 1, 0], unc[1, 1, 0], unc[2, 2, 2], unc[3, 2, 2]])


def test_predict_corners_scales_by_cell():
    cfg = ModelConfig(template_size=8, search_size=16, patch_size=4, dim=8, depth=1, heads=2, head_channels=4,
                      cls_hidden=4)
    prob = np.zeros((2, 8, 8))
    prob[0, 1, 2] = 1.0
    prob[1, 6, 5] = 1.0
    unc = np.full((4, 8, 8), 0.5)
    pred = predict_corners(Tensor(prob), Tensor(unc), cfg)
    # cell is 16 / 8 = 2 px; corners at cell centres
    np.testing.assert_allclose(pred.mu.data, [5.0, 3.0, 11.0, 13.0])
    np.testing.assert_allclose(pred.sigma.data, 1.0)


def test_uncertainty_loss_examples():
    zero = np.zeros(4)
    assert abs(uncertainty_loss(zero, np.ones(4), zero).item()) <= 1e-12
    # one coordinate off by 2 with sigma 1: that coordinate contributes 2.0
    mu = np.array([2.0])
    assert abs(uncertainty_loss(mu, np.ones(1), np.zeros(1)).item() - 2.0) <= 1e-12
    delta = 1.7
    value = uncertainty_loss(np.array([delta]), np.array([delta]), np.zeros(1)).item()
    assert abs(value - (0.5 + math.log(delta ** 2) / 2)) <= 1e-12


def _dl_dsigma(delta, sigma):
    s = Tensor(np.array([sigma]), requires_grad=True)
    with Tape() as tape:
        out = uncertainty_loss(np.array([delta]), s, np.zeros(1))
    return float(backward(tape, out)[s][0])


@pytest.mark.parametrize("delta", [0.3, 1.0, 2.0, 7.5])
def test_sigma_stationary_at_delta(delta):
    assert abs(_dl_dsigma(delta, delta)) <= 1e-12
    assert _dl_dsigma(delta, delta * 0.9) < 0 < _dl_dsigma(delta, delta * 1.1)


def test_uncertainty_loss_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        uncertainty_loss(np.zeros(4), np.array([1.0, 0.0, 1.0, 1.0]), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_full_form_offset_and_gradients(seed):
    rng = np.random.default_rng(seed)
    mu, gt = rng.normal(size=4) * 5, rng.normal(size=4) * 5
    sigma = rng.uniform(0.01, 10, 4)
    a = uncertainty_loss(mu, sigma, gt).item()
    b = uncertainty_loss_full(mu, sigma, gt).item()
    assert abs(b - a - HALF_LOG_2PI) <= 1e-12
    grads = []
    for fn in (uncertainty_loss, uncertainty_loss_full):
        m, s = Tensor(mu, requires_grad=True), Tensor(sigma, requires_grad=True)
        with Tape() as tape:
            out = fn(m, s, gt)
        g = backward(tape, out)
        grads.append(np.concatenate([g[m], g[s]]))
    np.testing.assert_allclose(grads[0], grads[1], atol=1e-12, rtol=0)


def test_full_form_at_perfect_prediction():
    assert abs(uncertainty_loss_full(np.zeros(4), np.ones(4), np.zeros(4)).item() - 0.9189385) < 1e-7


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_shape_properties(seed):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.1, 5.0)
    # strictly convex in mu: positive second difference
    xs = np.linspace(-3, 3, 7)
    vals = [uncertainty_loss(np.array([x]), np.array([sigma]), np.zeros(1)).item() for x in xs]
    assert np.all(np.diff(vals, 2) > 0)
    # nondecreasing in |delta| at fixed sigma
    deltas = np.sort(rng.uniform(0, 5, 6))
    vals = [uncertainty_loss(np.array([d]), np.array([sigma]), np.zeros(1)).item() for d in deltas]
    assert np.all(np.diff(vals) >= 0)
    # delta = 0: increasing in sigma
    s1, s2 = np.sort(rng.uniform(0.01, 5, 2))
    if s2 > s1:
        assert (uncertainty_loss(np.zeros(1), np.array([s2]), np.zeros(1)).item()
                > uncertainty_loss(np.zeros(1), np.array([s1]), np.zeros(1)).item())


def test_uncertainty_loss_grad_check_100_points():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        mu, gt = rng.normal(size=4) * 3, rng.normal(size=4) * 3
        sigma = rng.uniform(0.3, 3.0, 4)
        worst = max(worst, grad_check(lambda s: uncertainty_loss(mu, s, gt), sigma).max_rel_error)
        worst = max(worst, grad_check(lambda m: uncertainty_loss(m, sigma, gt), mu).max_rel_error)
    assert worst <= 1e-6


def test_encoder_to_decoder_pipeline_shapes():
    cfg = preset("tiny").model
    params = init_params(cfg, 0)
    rng = np.random.default_rng(0)
    _, f_s = encode(rng.random((3, cfg.template_size, cfg.template_size)),
                    rng.random((3, cfg.search_size, cfg.search_size)), cfg, params)
    prob, unc = decode_heads(f_s, cfg, params)
    pred = predict_corners(prob, unc, cfg)
    assert pred.mu.shape == (4,) and pred.sigma.shape == (4,)
    assert np.all(pred.sigma.data > 0)
    assert np.all((pred.unc_normalized().data > 0) & (pred.unc_normalized().data < 1))
