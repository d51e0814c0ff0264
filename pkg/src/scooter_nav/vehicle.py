"""Kinematic single-track models, axle transforms, roll set point and integrators.

Two state layouts are used:

* estimator state ``[p_s_x, p_s_y, psi]`` at the GNSS antenna, driven by the
  rear-axle speed ``v`` and steering angle ``delta``;
* controller state ``[p_f_x, p_f_y, v, cos(psi), sin(psi), delta]`` at the
  front axle, driven by ``[a, delta_dot]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# controller state / input indices
PX, PY, V, C, S, D = range(6)
A_IN, DD_IN = range(2)
NX, NU = 6, 2


class NonFiniteState(FloatingPointError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    L: float = 0.9  # wheel axle distance [m]
    l_r: float = 0.45  # rear axle to GNSS antenna [m]
    g: float = 9.81

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"axle distance L must be positive, got {self.L}")
        if not 0 <= self.l_r <= self.L:
            raise ValueError(f"l_r must lie in [0, L], got {self.l_r}")
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")


def sideslip(delta, params: VehicleParams):
    return np.arctan(params.l_r * np.tan(delta) / params.L)


def sensor_speed(v, beta):
    return v * np.sqrt(1.0 + np.tan(beta) ** 2)


def ekf_dynamics(x, v, delta, params: VehicleParams) -> np.ndarray:
    psi = x[2]
    beta = sideslip(delta, params)
    vs = sensor_speed(v, beta)
    return np.array([
        vs * math.cos(psi + beta),
        vs * math.sin(psi + beta),
        v * math.tan(delta) / params.L,
    ])


def ekf_jacobian(x, v, delta, params: VehicleParams) -> np.ndarray:
    """d(ekf_dynamics)/dx; only the heading column is nonzero."""
    beta = sideslip(delta, params)
    vs = sensor_speed(v, beta)
    J = np.zeros((3, 3))
    J[0, 2] = -vs * math.sin(x[2] + beta)
    J[1, 2] = vs * math.cos(x[2] + beta)
    return J


def mpc_dynamics(x, u, params: VehicleParams) -> np.ndarray:
    """Continuous-time controller model. Accepts single states or stacked ``(..., 6)`` arrays."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v, c, s, d = x[..., V], x[..., C], x[..., S], x[..., D]
    L = params.L
    w = v * np.tan(d) / L
    return np.stack([
        v * c - L * s * w,
        v * s + L * c * w,
        u[..., A_IN],
        -s * w,
        c * w,
        u[..., DD_IN],
    ], axis=-1)


def mpc_jacobians(x, u, params: VehicleParams):
    """Analytic ``(df/dx, df/du)`` of :func:`mpc_dynamics`, stacked over leading axes."""
    x = np.asarray(x, dtype=float)
    v, c, s, d = x[..., V], x[..., C], x[..., S], x[..., D]
    L = params.L
    t = np.tan(d)
    sec2 = 1.0 + t * t
    w = v * t / L
    w_v = t / L
    w_d = v * sec2 / L
    shape = x.shape[:-1]
    Jx = np.zeros(shape + (NX, NX))
    Jx[..., PX, V] = c - L * s * w_v
    Jx[..., PX, C] = v
    Jx[..., PX, S] = -L * w
    Jx[..., PX, D] = -L * s * w_d
    Jx[..., PY, V] = s + L * c * w_v
    Jx[..., PY, C] = L * w
    Jx[..., PY, S] = v
    Jx[..., PY, D] = L * c * w_d
    Jx[..., C, V] = -s * w_v
    Jx[..., C, S] = -w
    Jx[..., C, D] = -s * w_d
    Jx[..., S, V] = c * w_v
    Jx[..., S, C] = w
    Jx[..., S, D] = c * w_d
    Ju = np.zeros(shape + (NX, NU))
    Ju[..., V, A_IN] = 1.0
    Ju[..., D, DD_IN] = 1.0
    return Jx, Ju


def _renormalize(x):
    n = np.sqrt(x[..., C] ** 2 + x[..., S] ** 2)
    x[..., C] /= n
    x[..., S] /= n
    return x


def integrate(x, u, dt: float, method: str = "rk4", params: VehicleParams | None = None) -> np.ndarray:
    """One integration step.

    A 6-vector is a controller state with input ``[a, delta_dot]``; its heading
    embedding is renormalized after the step. A 3-vector is an estimator state
    with input ``[v, delta]``. ``method`` is ``"euler"`` or ``"rk4"``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    params = params or VehicleParams()
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 3:
        def f(y):
            return ekf_dynamics(y, u[0], u[1], params)
    else:
        def f(y):
            return mpc_dynamics(y, u, params)
    if method == "euler":
        out = x + dt * f(x)
    elif method == "rk4":
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integration method {method!r}")
    if out.shape[-1] == NX:
        out = _renormalize(out)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"integration produced non-finite state {out}")
    return out


def rk4_sensitivities(x, u, dt: float, params: VehicleParams):
    """Batched RK4 step (with heading renormalization) and its Jacobians.

    ``x``: (N, 6), ``u``: (N, 2). Returns ``(x_next, A, B)`` with ``A`` (N, 6, 6)
    and ``B`` (N, 6, 2) the exact derivatives of the discrete map.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    N = x.shape[0]
    eye = np.zeros((N, NX, NX + NU))
    eye[:, :, :NX] = np.eye(NX)

    def stage(y, dy):
        Jx, Ju = mpc_jacobians(y, u, params)
        k = mpc_dynamics(y, u, params)
        dk = Jx @ dy
        dk[:, :, NX:] += Ju
        return k, dk

    k1, d1 = stage(x, eye)
    k2, d2 = stage(x + 0.5 * dt * k1, eye + 0.5 * dt * d1)
    k3, d3 = stage(x + 0.5 * dt * k2, eye + 0.5 * dt * d2)
    k4, d4 = stage(x + dt * k3, eye + dt * d3)
    y = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    dy = eye + dt / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
    # heading renormalization q -> q/|q| on the (cos, sin) pair
    q = y[:, C:S + 1]
    nq = np.sqrt(np.sum(q * q, axis=1))
    qn = q / nq[:, None]
    P = (np.eye(2)[None] - qn[:, :, None] * qn[:, None, :]) / nq[:, None, None]
    dy[:, C:S + 1, :] = P @ dy[:, C:S + 1, :]
    y[:, C:S + 1] = qn
    return y, dy[:, :, :NX], dy[:, :, NX:]


def sensor_to_front(x, params: VehicleParams) -> np.ndarray:
    px, py, psi = x
    off = params.L - params.l_r
    return np.array([px + off * math.cos(psi), py + off * math.sin(psi), psi])


def sensor_to_rear(x, params: VehicleParams) -> np.ndarray:
    px, py, psi = x
    return np.array([px - params.l_r * math.cos(psi), py - params.l_r * math.sin(psi), psi])


def roll_setpoint(v, delta, params: VehicleParams):
    """Steady-state lean angle the balancing controller needs at speed ``v`` and steering ``delta``."""
    return np.arctan(np.asarray(v) ** 2 * np.tan(delta) / (params.L * params.g))


def roll_setpoint_rate(v, delta, a, delta_dot, params: VehicleParams):
    """Time derivative of :func:`roll_setpoint` given ``v' = a`` and ``delta' = delta_dot``."""
    L, g = params.L, params.g
    t = np.tan(delta)
    sec2 = 1.0 + t * t
    num = 2.0 * v * t * a + v * v * sec2 * delta_dot
    den = L * L * g * g + v ** 4 * t * t
    return L * g * num / den


def roll_setpoint_rate_grad(v, delta, a, delta_dot, params: VehicleParams):
    """Partial derivatives of :func:`roll_setpoint_rate` w.r.t. ``(v, delta, a, delta_dot)``.

    Returned as an array with a trailing axis of length 4.
    """
    L, g = params.L, params.g
    v = np.asarray(v, dtype=float)
    t = np.tan(delta)
    sec2 = 1.0 + t * t
    num = 2.0 * v * t * a + v * v * sec2 * delta_dot
    den = L * L * g * g + v ** 4 * t * t
    dn = np.stack([
        2.0 * t * a + 2.0 * v * sec2 * delta_dot,
        2.0 * v * a * sec2 + 2.0 * v * v * sec2 * t * delta_dot,
        2.0 * v * t,
        v * v * sec2,
    ], axis=-1)
    dd = np.stack([
        4.0 * v ** 3 * t * t,
        2.0 * v ** 4 * t * sec2,
        np.zeros_like(v * t),
        np.zeros_like(v * t),
    ], axis=-1)
    return L * g * (dn * den[..., None] - num[..., None] * dd) / (den * den)[..., None]
