import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scooter_nav.vehicle import (NonFiniteState, VehicleParams, ekf_dynamics, ekf_jacobian, integrate,
                                 mpc_dynamics, mpc_jacobians, rk4_sensitivities, roll_setpoint,
                                 roll_setpoint_rate, roll_setpoint_rate_grad, sensor_speed, sensor_to_front,
                                 sensor_to_rear, sideslip)

P = VehicleParams()


def mpc_state(px=0.0, py=0.0, v=0.0, psi=0.0, delta=0.0):
    return np.array([px, py, v, math.cos(psi), math.sin(psi), delta])


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(L=0)
    with pytest.raises(ValueError):
        VehicleParams(l_r=1.0)


def test_sideslip_examples():
    assert sideslip(0.0, P) == 0.0
    assert sideslip(0.65, P) == pytest.approx(math.atan(0.5 * math.tan(0.65)), rel=1e-15)
    assert sideslip(0.65, P) == pytest.approx(0.36326, abs=1e-4)


@given(st.floats(-1.5, 1.5))
def test_sideslip_antisymmetric(d):
    assert sideslip(-d, P) == -sideslip(d, P)


def test_sensor_speed_examples():
    assert sensor_speed(0.7, 0.0) == 0.7
    b = sideslip(0.65, P)
    assert sensor_speed(0.7, b) == pytest.approx(0.7 / math.cos(b), rel=1e-14)
    assert sensor_speed(0.7, b) == pytest.approx(0.74885, abs=1e-4)
    assert sensor_speed(0.0, 0.3) == 0.0


def test_ekf_dynamics_examples():
    assert np.all(ekf_dynamics(np.zeros(3), 0.0, 0.3, P) == 0)
    assert np.allclose(ekf_dynamics(np.zeros(3), 0.7, 0.0, P), [0.7, 0, 0])
    assert np.allclose(ekf_dynamics(np.zeros(3), 0.7, 0.65, P), [0.70000, 0.26607, 0.59127], atol=1e-5)


@given(st.floats(0, 0.7), st.floats(-0.65, 0.65), st.floats(-10, 10))
def test_planar_speed_equals_sensor_speed(v, d, psi):
    f = ekf_dynamics(np.array([0, 0, psi]), v, d, P)
    assert math.hypot(f[0], f[1]) == pytest.approx(sensor_speed(v, sideslip(d, P)), abs=1e-12)


def test_mpc_dynamics_examples():
    assert np.all(mpc_dynamics(mpc_state(), [0, 0], P) == 0)
    assert np.allclose(mpc_dynamics(mpc_state(v=0.7), [0.1, 0.2], P), [0.7, 0, 0.1, 0, 0, 0.2])
    f = mpc_dynamics(mpc_state(v=0.7, delta=0.65), [0.3, -0.1], P)
    assert np.allclose(f, [0.7, 0.9 * 0.59127009, 0.3, 0, 0.59127009, -0.1], atol=1e-7)


def _fd(fun, x, h=1e-6):
    cols = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def test_jacobians_match_central_differences(rng):
    for _ in range(1000):
        v, d, psi = rng.uniform(0, 0.7), rng.uniform(-0.65, 0.65), rng.uniform(-math.pi, math.pi)
        x = mpc_state(*rng.normal(size=2), v, psi, d)
        u = rng.uniform([-1, -0.4], [0.7, 0.4])
        Jx, Ju = mpc_jacobians(x, u, P)
        assert _rel_err(Jx, _fd(lambda y: mpc_dynamics(y, u, P), x)) < 1e-5
        assert _rel_err(Ju, _fd(lambda w: mpc_dynamics(x, w, P), u)) < 1e-5
        xe = np.array([*rng.normal(size=2), psi])
        assert _rel_err(ekf_jacobian(xe, v, d, P), _fd(lambda y: ekf_dynamics(y, v, d, P), xe)) < 1e-5


def test_rk4_sensitivities_match_differences(rng):
    X = np.array([mpc_state(*rng.normal(size=2), rng.uniform(0, 0.7), rng.uniform(-3, 3), rng.uniform(-0.6, 0.6))
                  for _ in range(5)])
    U = rng.uniform([-1, -0.4], [0.7, 0.4], size=(5, 2))
    nxt, A, B = rk4_sensitivities(X, U, 0.125, P)
    for k in range(5):
        assert np.allclose(nxt[k], integrate(X[k], U[k], 0.125, "rk4", P), atol=1e-14)
        fx = _fd(lambda y: integrate(y, U[k], 0.125, "rk4", P), X[k])
        fu = _fd(lambda w: integrate(X[k], w, 0.125, "rk4", P), U[k])
        assert _rel_err(A[k], fx) < 1e-6
        assert _rel_err(B[k], fu) < 1e-6


def test_integrate_fixed_point_and_straight_line():
    x = mpc_state(1.0, 2.0, 0.0, 0.3, 0.1)
    for m in ("euler", "rk4"):
        assert np.allclose(integrate(x, [0, 0], 0.125, m, P), x, atol=1e-15)
        y = integrate(mpc_state(v=0.7), [0, 0], 0.125, m, P)
        assert y[0] == pytest.approx(0.0875, abs=1e-15)


def test_integrate_rejects_nonfinite():
    with pytest.raises(NonFiniteState), np.errstate(invalid="ignore"):
        integrate(mpc_state(v=np.inf), [0, 0], 0.1, "rk4", P)
    with pytest.raises(ValueError):
        integrate(mpc_state(), [0, 0], 0.0, "rk4", P)


def _ode_error(method, dt, x0, u, T=1.0):
    x = x0.copy()
    for _ in range(int(round(T / dt))):
        x = integrate(x, u, dt, method, P)
    ref = x0.copy()
    for _ in range(int(round(T / 1e-4))):
        ref = integrate(ref, u, 1e-4, "rk4", P)
    return np.max(np.abs(x - ref))


@pytest.mark.parametrize("method,ratio", [("rk4", 16.0), ("euler", 2.0)])
def test_convergence_order(method, ratio):
    x0 = mpc_state(0, 0, 0.5, 0.2, 0.3)
    u = np.array([0.2, 0.1])
    e1 = _ode_error(method, 0.1, x0, u)
    e2 = _ode_error(method, 0.05, x0, u)
    assert e1 / e2 == pytest.approx(ratio, rel=0.15)


@given(st.floats(0, 0.7), st.floats(-0.65, 0.65), st.floats(-1, 0.7), st.floats(-0.4, 0.4))
def test_heading_embedding_preserved(v, d, a, dd):
    x = integrate(mpc_state(0, 0, v, 1.0, d), [a, dd], 0.125, "rk4", P)
    assert abs(x[3] ** 2 + x[4] ** 2 - 1) < 1e-12


def test_axle_transforms():
    assert np.allclose(sensor_to_front([0, 0, 0], P), [0.45, 0, 0])
    assert np.allclose(sensor_to_front([0, 0, math.pi / 2], P), [0, 0.45, math.pi / 2])
    assert np.allclose(sensor_to_front([1, 2, 0.3], VehicleParams(l_r=0.9)), [1, 2, 0.3])
    assert np.allclose(sensor_to_rear([0, 0, 0], P), [-0.45, 0, 0])
    assert np.allclose(sensor_to_rear([1, 2, 0.3], VehicleParams(l_r=0.0)), [1, 2, 0.3])


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-10, 10))
def test_front_minus_rear_is_wheelbase(x, y, psi):
    f = sensor_to_front([x, y, psi], P)
    r = sensor_to_rear([x, y, psi], P)
    assert np.allclose(f[:2] - r[:2], [0.9 * math.cos(psi), 0.9 * math.sin(psi)], atol=1e-12)


def test_roll_setpoint_examples():
    assert roll_setpoint(0.0, 0.5, P) == 0.0
    assert roll_setpoint(0.7, 0.0, P) == 0.0
    assert roll_setpoint(0.7, 0.65, P) == pytest.approx(0.04217, abs=1e-5)


def test_roll_rate_examples():
    assert roll_setpoint_rate(0.0, 0.3, 0.5, 0.4, P) == 0.0
    assert roll_setpoint_rate(0.7, 0.0, 0.0, 0.4, P) == pytest.approx(0.196 / 8.829, rel=1e-12)
    assert roll_setpoint_rate(0.7, 0.0, 0.0, 0.4, P) > 0.0175


def random_profile(rng):
    """Smooth admissible (v(t), delta(t)) and their derivatives."""
    c = rng.uniform(-1, 1, size=6)

    def v(t):
        return 0.35 + 0.3 * math.sin(c[0] * t + c[1]) * math.cos(c[2] * t)

    def dv(t):
        return 0.3 * (c[0] * math.cos(c[0] * t + c[1]) * math.cos(c[2] * t)
                      - c[2] * math.sin(c[0] * t + c[1]) * math.sin(c[2] * t))

    def d(t):
        return 0.6 * math.sin(c[3] * t + c[4]) + 0.02 * c[5] * t

    def dd(t):
        return 0.6 * c[3] * math.cos(c[3] * t + c[4]) + 0.02 * c[5]

    return v, dv, d, dd


def test_roll_rate_is_time_derivative(rng):
    h = 1e-5
    for _ in range(100):
        v, dv, d, dd = random_profile(rng)
        for t in np.linspace(0, 3, 7):
            fd = (roll_setpoint(v(t + h), d(t + h), P) - roll_setpoint(v(t - h), d(t - h), P)) / (2 * h)
            an = roll_setpoint_rate(v(t), d(t), dv(t), dd(t), P)
            assert abs(an - fd) <= 1e-6 * max(abs(fd), 1e-3)


def test_roll_rate_gradient(rng):
    for _ in range(200):
        z = np.array([rng.uniform(0, 0.7), rng.uniform(-0.65, 0.65), rng.uniform(-1, 0.7), rng.uniform(-0.4, 0.4)])
        g = roll_setpoint_rate_grad(*z, P)
        assert _rel_err(g, _fd(lambda q: np.array(roll_setpoint_rate(*q, P)), z)) < 1e-7
