import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scooter_nav.localization import (Ekf, EkfBelief, EncoderSample, GnssFix, InsufficientBaseline, InvalidDt,
                                      ProcessNoise, SingularInnovation, initialize, predict, update)
from scooter_nav.vehicle import VehicleParams, sideslip

P = VehicleParams()
Q = ProcessNoise()


def belief(mean=(0.0, 0.0, 0.0), cov=None, t=0.0):
    return EkfBelief(np.array(mean, dtype=float), np.eye(3) * 0.1 if cov is None else np.asarray(cov, float), t)


def is_psd(C):
    return np.allclose(C, C.T, atol=1e-12) and np.linalg.eigvalsh(C).min() > -1e-10


def test_default_process_noise():
    assert np.allclose(np.diag(Q.Q), [0.01, 0.01, 0.02])
    with pytest.raises(ValueError):
        ProcessNoise(-np.eye(3))


def test_predict_at_rest_grows_cov_by_q():
    b = belief((1, 2, 0.4))
    out = predict(b, EncoderSample(0.0, 0.3), 0.1, P)
    assert np.array_equal(out.mean, b.mean)
    assert np.allclose(out.cov, b.cov + 0.1 * Q.Q, atol=1e-15)


def test_predict_straight_east():
    out = predict(belief(), EncoderSample(0.7, 0.0), 0.1, P)
    assert np.allclose(out.mean, [0.07, 0, 0], atol=1e-15)


def test_predict_jacobian_heading_column():
    b = belief((0, 0, 0.3), cov=np.diag([0, 0, 1.0]))
    d = 0.4
    out = predict(b, EncoderSample(0.5, d), 0.1, P, ProcessNoise(np.zeros((3, 3))))
    beta = sideslip(d, P)
    vs = 0.5 / math.cos(beta)
    col = np.array([-vs * math.sin(0.3 + beta), vs * math.cos(0.3 + beta), 1.0 / 0.1]) * 0.1
    assert np.allclose(out.cov, np.outer(col, col), atol=1e-14)


@pytest.mark.parametrize("dt", [0.0, -0.1, 0.51])
def test_predict_rejects_bad_dt(dt):
    with pytest.raises(InvalidDt):
        predict(belief(), EncoderSample(0.1, 0.0), dt, P)


def test_predict_preserves_psd_over_many_steps(rng):
    b = belief()
    for _ in range(100_000 // 100):
        for _ in range(100):
            enc = EncoderSample(rng.uniform(0, 0.7), rng.uniform(-0.65, 0.65))
            b = predict(b, enc, rng.uniform(1e-3, 0.5), P)
        assert is_psd(b.cov)
        b = EkfBelief(b.mean, b.cov / max(1.0, np.trace(b.cov)), b.t)


def test_update_zero_innovation():
    b = belief((1, 2, 0.3))
    out = update(b, GnssFix(np.array([1.0, 2.0]), 0.01 * np.eye(2)))
    assert np.allclose(out.mean, b.mean)
    assert np.trace(out.cov) < np.trace(b.cov)


def test_update_exact_measurement():
    out = update(belief(cov=np.eye(3)), GnssFix(np.array([3.0, -1.0]), 1e-12 * np.eye(2)))
    assert np.allclose(out.mean[:2], [3, -1], atol=1e-6)


def test_update_scalar_gain():
    out = update(belief(cov=np.eye(3)), GnssFix(np.array([1.0, 0.0]), np.eye(2)))
    assert out.mean[0] == pytest.approx(0.5)
    assert out.mean[1] == pytest.approx(0.0)


def test_update_huge_r_leaves_belief():
    b = belief((1, 2, 0.3))
    out = update(b, GnssFix(np.array([50.0, -20.0]), 1e12 * np.eye(2)))
    assert np.allclose(out.mean, b.mean, atol=1e-6)
    assert np.allclose(out.cov, b.cov, atol=1e-6)


def test_update_singular_innovation():
    with pytest.raises(SingularInnovation):
        update(belief(cov=np.zeros((3, 3))), GnssFix(np.array([0.0, 0.0]), np.diag([1.0, 1e-14])))


def test_heading_moves_only_through_cross_covariance():
    b = belief(cov=np.diag([0.1, 0.1, 0.2]))
    assert update(b, GnssFix(np.array([0.0, 1.0]), 0.01 * np.eye(2))).mean[2] == 0.0
    C = np.array([[0.1, 0, 0], [0, 0.1, 0.05], [0, 0.05, 0.2]])
    assert update(belief(cov=C), GnssFix(np.array([0.0, 1.0]), 0.01 * np.eye(2))).mean[2] > 0


def test_initialize_examples():
    R = 0.01 * np.eye(2)
    b = initialize([GnssFix(np.array([0.0, 0.0]), R), GnssFix(np.array([1.0, 0.0]), R)])
    assert b.mean[2] == 0.0 and np.allclose(b.mean[:2], [1, 0])
    assert np.allclose(b.cov, np.diag([0.01, 0.01, 0.25]))
    b = initialize([GnssFix(np.array([0.0, 0.0]), R), GnssFix(np.array([0.0, 2.0]), R)])
    assert b.mean[2] == pytest.approx(math.pi / 2)
    with pytest.raises(InsufficientBaseline):
        initialize([GnssFix(np.array([0.0, 0.0]), R), GnssFix(np.array([0.05, 0.0]), R)])


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 0.7), st.floats(-0.6, 0.6), st.floats(-1, 1),
                          st.floats(-1, 1), st.floats(1e-4, 1.0)), min_size=1, max_size=40))
def test_cov_psd_under_interleaving(ops):
    b = belief(cov=np.diag([0.01, 0.01, 0.25]))
    for is_fix, v, d, zx, zy, r in ops:
        if is_fix:
            b = update(b, GnssFix(b.mean[:2] + [zx, zy], r * np.eye(2)))
        else:
            b = predict(b, EncoderSample(v, d), 0.1, P)
        assert is_psd(b.cov)


def _straight_run(seed, sigma=0.05, T=30.0):
    rng = np.random.default_rng(seed)
    v = 0.63
    fixes = []
    ekf = None
    est, truth = [], []
    for i in range(int(T * 10) + 1):
        t = i * 0.1
        true = np.array([v * t, 0.0])
        z = true + sigma * rng.standard_normal(2)
        fix = GnssFix(z, sigma ** 2 * np.eye(2), t)
        if ekf is None:
            fixes.append(fix)
            try:
                ekf = Ekf(initialize([fixes[0], fix]), P, ProcessNoise(np.diag([1e-3, 1e-3, 1e-3])))
            except InsufficientBaseline:
                continue
            ekf.on_encoder(EncoderSample(v, 0.0, t))
        else:
            ekf.on_fix(fix)
        est.append(ekf.belief.mean.copy())
        truth.append((t, *true))
    return np.array(est), np.array(truth)


def test_straight_line_smoothing():
    est, truth = _straight_run(3)
    m = truth[:, 0] >= 5.0
    err = np.linalg.norm(est[m, :2] - truth[m, 1:], axis=1)
    rmse = math.sqrt(np.mean(err ** 2))
    assert rmse < 0.05
    assert rmse < 0.05 * math.sqrt(2)  # raw GNSS RMSE of an isotropic fix


def test_ekf_discards_stale_fix():
    ekf = Ekf(belief(t=1.0), P)
    ekf.on_fix(GnssFix(np.array([5.0, 5.0]), 0.01 * np.eye(2), 0.5))
    assert ekf.stale_fixes == 1
    assert np.array_equal(ekf.belief.mean, [0, 0, 0])


def test_ekf_advance_in_bounded_steps():
    ekf = Ekf(belief(), P)
    ekf.on_encoder(EncoderSample(0.5, 0.0))
    ekf.advance(1.3)
    assert ekf.belief.t == pytest.approx(1.3)
    assert ekf.belief.mean[0] == pytest.approx(0.65)
