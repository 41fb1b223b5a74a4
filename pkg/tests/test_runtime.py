import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unctrack.config import KalmanConfig, preset
from unctrack.exceptions import InputError, NumericalError
from unctrack.model import UncTrackModel, init_params
from unctrack.runtime.geometry import crop_resample
from unctrack.runtime.kalman import KalmanState, kalman_init, kalman_predict, kalman_step, kalman_update
from unctrack.runtime.tracker import crop_search, init, step, track_sequence

from .stubs import ScriptedModel


def moving_gt(n, start=(20.0, 24.0), velocity=(1.0, 0.5), size=(14.0, 12.0)):
    t = np.arange(n)[:, None]
    c = np.asarray(start) + t * np.asarray(velocity)
    half = np.asarray(size) / 2
    return np.hstack([c - half, c + half])


def frames(n, size=64):
    rng = np.random.default_rng(0)
    return [rng.random((3, size, size)) for _ in range(n)]


# Kalman filter

def test_kalman_init_centre_and_zero_velocity():
    k = kalman_init([10.0, 20.0, 30.0, 28.0])
    np.testing.assert_array_equal(k.mean, [20.0, 24.0, 20.0, 8.0, 0, 0, 0, 0])
    np.testing.assert_array_equal(k.box, [10.0, 20.0, 30.0, 28.0])


def test_kalman_stationary_converges():
    box = [10.0, 10.0, 26.0, 22.0]
    k = kalman_init([12.0, 9.0, 27.0, 24.0])
    for _ in range(200):
        k = kalman_step(k, box)
    np.testing.assert_allclose(k.box, box, atol=1e-6)
    np.testing.assert_allclose(k.mean[4:], 0.0, atol=1e-6)


def test_kalman_constant_velocity_criterion():
    k = kalman_init([0.0, 0.0, 10.0, 10.0])
    for t in range(1, 31):
        k = kalman_step(k, [2.0 * t, 0.0, 2.0 * t + 10.0, 10.0])
    ahead = kalman_predict(k)
    err = np.hypot(ahead.mean[0] - (2.0 * 31 + 5.0), ahead.mean[1] - 5.0)
    assert err < 1.0


def test_predict_inflates_positional_covariance():
    k = kalman_init([0.0, 0.0, 10.0, 10.0])
    for _ in range(5):
        nxt = kalman_predict(k)
        assert np.trace(nxt.covariance[:4, :4]) > np.trace(k.covariance[:4, :4])
        k = nxt


def test_kalman_rejects_bad_covariance():
    bad = KalmanState(np.zeros(8), -np.eye(8))
    with pytest.raises(NumericalError):
        kalman_predict(bad)
    asym = np.eye(8)
    asym[0, 1] = 1.0
    with pytest.raises(NumericalError):
        kalman_update(KalmanState(np.zeros(8), asym), [0, 0, 1, 1])


def test_covariance_symmetric_psd_over_1000_steps():
    rng = np.random.default_rng(0)
    k = kalman_init([10.0, 10.0, 20.0, 20.0])
    for t in range(1000):
        obs = None if rng.random() < 0.4 else [10 + t * 0.1, 10.0, 20 + t * 0.1, 20.0] + rng.normal(0, 2, 4)
        k = kalman_step(k, obs)
        cov = k.covariance
        assert np.max(np.abs(cov - cov.T)) <= 1e-9
        assert np.linalg.eigvalsh(cov).min() >= -1e-9
        assert k.mean[2] >= 0 and k.mean[3] >= 0


# crop geometry

@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 80), st.floats(-20, 80), st.floats(4, 100), st.floats(0, 64), st.floats(0, 64))
def test_crop_mapping_round_trip(cx, cy, side, px, py):
    _, mapping = crop_resample(np.zeros((3, 8, 8)), cx, cy, side, 16)
    pts = np.array([px, py, px + 3.0, py + 1.0])
    np.testing.assert_allclose(mapping.to_frame(mapping.to_patch(pts)), pts, atol=1e-9)


def test_crop_identity_and_zero_padding():
    frame = np.random.default_rng(1).random((3, 16, 16))
    patch, mapping = crop_resample(frame, 8.0, 8.0, 16.0, 16)
    np.testing.assert_allclose(patch, frame, atol=1e-12)
    assert mapping.scale == 1.0
    patch, _ = crop_resample(frame, 0.0, 0.0, 16.0, 16)
    np.testing.assert_array_equal(patch[:, :7, :7], 0.0)


def test_search_side_doubles_with_scale():
    cfg = preset("desk")
    gt = moving_gt(3)
    state = init(frames(1)[0], gt[0], cfg, ScriptedModel(gt))
    _, m1 = crop_search(frames(1)[0], state)
    _, m2 = crop_search(frames(1)[0], state.__class__(**{**state.__dict__, "search_scale": 2.0}))
    side = cfg.tracker.base_context * max(14.0, 12.0)
    assert abs(m1.scale * cfg.model.search_size - side) <= 1e-12
    assert abs(m2.scale - 2 * m1.scale) <= 1e-12


# tracker state machine

def test_init_contract():
    cfg = preset("desk")
    gt = moving_gt(2)
    state = init(frames(1)[0], gt[0], cfg, ScriptedModel(gt))
    assert state.template.shape == (3, cfg.model.template_size, cfg.model.template_size)
    assert len(state.bank) == 1
    np.testing.assert_array_equal(state.kalman.mean[:2], [20.0, 24.0])
    with pytest.raises(InputError):
        init(frames(1)[0], [50.0, 50.0, 70.0, 60.0], cfg, ScriptedModel(gt))


def test_full_template_extent():
    cfg = preset("full")
    gt = moving_gt(1, start=(100.0, 100.0), size=(40.0, 30.0))
    state = init(np.zeros((3, 256, 256)), gt[0], cfg, ScriptedModel(gt, dim=cfg.model.dim))
    assert state.template.shape == (3, 128, 128)


def test_stub_tracker_reports_ground_truth():
    cfg = preset("desk")
    n = 40
    gt = moving_gt(n)
    reports, states = track_sequence(frames(n), gt[0], cfg, ScriptedModel(gt))
    boxes = np.array([r.box for r in reports])
    np.testing.assert_allclose(boxes, gt, atol=1e-9)
    assert all(r.accepted for r in reports)
    # the filter locks on to the constant-velocity motion
    ahead = kalman_predict(states[-1].kalman).mean[:2]
    np.testing.assert_allclose(ahead, (gt[-1, :2] + gt[-1, 2:]) / 2 + [1.0, 0.5], atol=0.05)


def scripted_trace(confidences, n=20, capacity=6):
    cfg = preset("desk")
    cfg.tracker.capacity = capacity
    gt = moving_gt(n)
    model = ScriptedModel(gt, dict(enumerate(confidences, start=1)))
    return track_sequence(frames(n), gt[0], cfg, model)


def test_bank_grows_to_capacity_then_stays():
    reports, states = scripted_trace([0.9] * 10, n=11)
    assert [len(s.bank) for s in states] == [1, 2, 3, 4, 5, 6, 6, 6, 6, 6, 6]
    assert [e.source_frame for e in states[-1].bank.entries] == [5, 6, 7, 8, 9, 10]


def test_reject_branch_contract():
    conf = [0.9, 0.5, 0.2, 0.9, 0.4, 0.51]
    reports, states = scripted_trace(conf, n=len(conf) + 1)
    for t, p in enumerate(conf, start=1):
        prev, cur = states[t - 1], states[t]
        if p > 0.5:
            assert reports[t].accepted and cur.search_scale == 1.0
            assert cur.template_frame == t and len(cur.bank) == len(prev.bank) + 1
        else:
            assert not reports[t].accepted and reports[t].resampled
            assert cur.bank is prev.bank
            assert cur.search_scale == 2.0
            assert cur.template_frame == prev.template_frame
            np.testing.assert_array_equal(cur.template, prev.template)
            # the filter only coasts
            np.testing.assert_allclose(cur.kalman.mean, kalman_predict(prev.kalman, KalmanConfig()).mean)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([0.1, 0.5, 0.6, 0.99]), min_size=1, max_size=15), st.integers(1, 6))
def test_state_machine_invariants(conf, capacity):
    reports, states = scripted_trace(conf, n=len(conf) + 1, capacity=capacity)
    lengths = [len(s.bank) for s in states]
    for t in range(1, len(states)):
        assert lengths[t] >= lengths[t - 1] and lengths[t] <= capacity
        assert states[t].search_scale == (1.0 if reports[t].accepted else 2.0)
        tf = states[t].template_frame
        assert tf <= t and (tf == 0 or reports[tf].accepted)


def test_step_is_deterministic():
    cfg = preset("desk")
    model = UncTrackModel(cfg.model, init_params(cfg.model, 0))
    gt = moving_gt(3)
    fr = frames(3)
    s0 = init(fr[0], gt[0], cfg, model)
    (sa, a), (sb, b) = step(s0, fr[1], model), step(s0, fr[1], model)
    np.testing.assert_array_equal(a.box, b.box)
    np.testing.assert_array_equal(a.sigma, b.sigma)
    assert (a.confidence, a.accepted) == (b.confidence, b.accepted)
    np.testing.assert_array_equal(sa.kalman.mean, sb.kalman.mean)


def test_ablation_switches():
    cfg = preset("desk")
    cfg.tracker.use_uld = False
    gt = moving_gt(5)
    reports, _ = track_sequence(frames(5), gt[0], cfg, ScriptedModel(gt, {1: 0.1, 2: 0.1}, sigma=3.0))
    assert all(r.accepted for r in reports)
    assert all(np.array_equal(r.sigma, np.ones(4)) for r in reports)
    cfg = preset("desk")
    cfg.tracker.use_pmn = False
    reports, _ = track_sequence(frames(5), gt[0], cfg, ScriptedModel(gt, {1: 0.1}))
    assert reports[1].confidence == 1.0 and reports[1].accepted


def test_non_finite_localisation_aborts_with_stage():
    class Broken(ScriptedModel):
        def localize(self, template, search, region=None):
            loc = super().localize(template, search, region)
            if self.frame == 1:
                loc.sigma[0] = np.nan
            return loc

    gt = moving_gt(3)
    with pytest.raises(NumericalError, match="localize"):
        track_sequence(frames(3), gt[0], preset("desk"), Broken(gt))
