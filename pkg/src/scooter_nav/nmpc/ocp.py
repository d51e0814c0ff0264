"""Multiple-shooting transcription of the path-following optimal control problem.

Decision vector layout: ``[x_0 .. x_N | u_0 .. u_{N-1}]`` (6 and 2 entries per
stage). Box constraints on ``v``, ``delta``, ``a`` and ``delta_dot`` are hard;
the roll-rate, curve-speed and corridor inequalities are softened with one
nonnegative slack each, penalized linearly in the objective. The roll-rate
bound is imposed at both ends of each stage (``x_k`` and ``x_{k+1}`` with
input ``u_k``), since the rate can grow within a stage under acceleration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..pathmodel import Path, path_sdf_batch
from ..refgen import RefTrajectory
from ..vehicle import (NU, NX, VehicleParams, roll_setpoint_rate,
                       roll_setpoint_rate_grad, rk4_sensitivities)
from .qp import QpProblem

SLACK_PENALTY = 1e3

SOFT_KINDS = ("roll_rate_upper", "roll_rate_lower", "curve_pos", "curve_neg", "sdf_front", "sdf_rear")


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class OcpWeights:
    Q: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.04, 0.15, 0.15, 0.0025]))
    R: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.001]))
    P: np.ndarray | None = None  # defaults to Q

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        P = self.Q.copy() if self.P is None else np.asarray(self.P, dtype=float)
        object.__setattr__(self, "P", P)
        if self.Q.shape != (NX,) or self.P.shape != (NX,) or self.R.shape != (NU,):
            raise ValueError("weights are diagonals: Q and P need 6 entries, R needs 2")
        if np.any(self.Q <= 0) or np.any(self.R <= 0) or np.any(self.P <= 0):
            raise ValueError("all weight diagonal entries must be positive")

    def scaled(self, c: float) -> "OcpWeights":
        return OcpWeights(self.Q * c, self.R * c, self.P * c)


@dataclass(frozen=True)
class OcpLimits:
    v_max: float = 0.7
    delta_max: float = 0.65
    delta_dot_max: float = 0.4
    a_min: float = -1.0
    a_max: float = 0.7
    roll_rate_max: float = 0.0175
    v_curve: float = 0.4

    def __post_init__(self):
        for name in ("v_max", "delta_max", "delta_dot_max", "a_max", "roll_rate_max", "v_curve"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.a_min < 0:
            raise ValueError("a_min must be negative")
        if self.v_curve > self.v_max:
            raise ValueError(
                f"v_curve ({self.v_curve}) exceeds v_max ({self.v_max}): the curve factor mu would be negative")

    @property
    def mu(self) -> float:
        return (self.v_max - self.v_curve) / (self.v_curve * self.delta_max)


def curve_speed_limit(delta, limits: OcpLimits):
    return limits.v_max / (1.0 + limits.mu * np.abs(delta))


def stage_cost(x, u, x_ref, u_ref, weights: OcpWeights, terminal: bool = False) -> float:
    dx = np.asarray(x, dtype=float) - x_ref
    q = weights.P if terminal else weights.Q
    c = float(dx @ (q * dx))
    if u is not None:
        du = np.asarray(u, dtype=float) - u_ref
        c += float(du @ (weights.R * du))
    return c


@dataclass
class Linearization:
    cost: float
    grad: np.ndarray  # d cost / d z (primal part)
    eq: np.ndarray  # equality residuals
    A: sp.csr_matrix
    soft: np.ndarray  # soft constraint values (>= 0 means satisfied)
    J: sp.csr_matrix  # soft constraint Jacobian
    x_next: np.ndarray  # shooting predictions F(x_k, u_k)


class OcpProblem:
    """Numeric OCP instance built by :func:`assemble_ocp`."""

    def __init__(self, x0, ref: RefTrajectory, path: Path, weights: OcpWeights,
                 limits: OcpLimits, params: VehicleParams, dt: float):
        self.x0 = np.asarray(x0, dtype=float)
        self.ref = ref
        self.path = path
        self.weights = weights
        self.limits = limits
        self.params = params
        self.dt = dt
        self.N = N = ref.N
        self.nxs = (N + 1) * NX
        self.n = self.nxs + N * NU
        self.n_soft = 4 * N + 4 * (N + 1)
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        X_lb, X_ub = lb[:self.nxs].reshape(N + 1, NX), ub[:self.nxs].reshape(N + 1, NX)
        U_lb, U_ub = lb[self.nxs:].reshape(N, NU), ub[self.nxs:].reshape(N, NU)
        X_lb[:, 2], X_ub[:, 2] = 0.0, limits.v_max
        X_lb[:, 5], X_ub[:, 5] = -limits.delta_max, limits.delta_max
        U_lb[:, 0], U_ub[:, 0] = limits.a_min, limits.a_max
        U_lb[:, 1], U_ub[:, 1] = -limits.delta_dot_max, limits.delta_dot_max
        self.lb, self.ub = lb, ub
        self.qdiag = np.concatenate([np.tile(weights.Q, N), weights.P, np.tile(weights.R, N)])
        self.zref = np.concatenate([ref.states.ravel(), ref.inputs.ravel()])
        self._A_pattern = _dynamics_pattern(N)
        self._J_pattern = _soft_pattern(N)

    def split(self, z):
        return z[:self.nxs].reshape(self.N + 1, NX), z[self.nxs:].reshape(self.N, NU)

    def join(self, X, U):
        return np.concatenate([np.asarray(X, dtype=float).ravel(), np.asarray(U, dtype=float).ravel()])

    def cost(self, z) -> float:
        d = z - self.zref
        return float(d @ (self.qdiag * d))

    def soft_values(self, z) -> np.ndarray:
        return self._soft(z, jac=False)[0]

    def eq_residual(self, z) -> np.ndarray:
        X, U = self.split(z)
        nxt = rk4_sensitivities(X[:-1], U, self.dt, self.params)[0]
        return np.concatenate([X[0] - self.x0, (X[1:] - nxt).ravel()])

    def merit(self, z, nu: float, rho: float = SLACK_PENALTY) -> float:
        c = self.soft_values(z)
        return self.cost(z) + rho * float(np.sum(np.maximum(-c, 0.0))) + nu * float(np.sum(np.abs(self.eq_residual(z))))

    def linearize(self, z) -> Linearization:
        X, U = self.split(z)
        N = self.N
        nxt, Ak, Bk = rk4_sensitivities(X[:-1], U, self.dt, self.params)
        eq = np.concatenate([X[0] - self.x0, (X[1:] - nxt).ravel()])
        rows, cols = self._A_pattern
        vals = np.concatenate([np.ones(NX), np.ones(N * NX), -Ak.ravel(), -Bk.ravel()])
        A = sp.csr_matrix((vals, (rows, cols)), shape=(NX * (N + 1), self.n))
        soft, jvals = self._soft(z, jac=True)
        jr, jc = self._J_pattern
        J = sp.csr_matrix((jvals, (jr, jc)), shape=(self.n_soft, self.n))
        d = z - self.zref
        return Linearization(float(d @ (self.qdiag * d)), 2.0 * self.qdiag * d, eq, A, soft, J, nxt)

    def _soft(self, z, jac: bool):
        X, U = self.split(z)
        N, lim, prm = self.N, self.limits, self.params
        v, dl = X[:, 2], X[:, 5]
        c_, s_ = X[:, 3], X[:, 4]
        # roll-rate set point bound, two-sided, at both ends of stages 0..N-1
        rr = np.concatenate([roll_setpoint_rate(v[:-1], dl[:-1], U[:, 0], U[:, 1], prm),
                             roll_setpoint_rate(v[1:], dl[1:], U[:, 0], U[:, 1], prm)])
        # curve speed, two-sided encoding of |delta|, stages 0..N
        mu = lim.mu
        dp, dn = 1.0 + mu * dl, 1.0 - mu * dl
        cp = lim.v_max / dp - v
        cn = lim.v_max / dn - v
        # corridor at front and rear axle
        pf = X[:, 0:2]
        pr = pf - prm.L * np.stack([c_, s_], axis=1)
        sf, gf, _ = path_sdf_batch(pf, self.path)
        sr, gr, _ = path_sdf_batch(pr, self.path)
        vals = np.concatenate([lim.roll_rate_max - rr, lim.roll_rate_max + rr, cp, cn, sf, sr])
        if not jac:
            return vals, None
        drr = np.concatenate([roll_setpoint_rate_grad(v[:-1], dl[:-1], U[:, 0], U[:, 1], prm),
                              roll_setpoint_rate_grad(v[1:], dl[1:], U[:, 0], U[:, 1], prm)])  # (2N, 4)
        j_up = -drr
        j_lo = drr
        j_cp = np.stack([-np.ones(N + 1), -lim.v_max * mu / dp ** 2], axis=1)
        j_cn = np.stack([-np.ones(N + 1), lim.v_max * mu / dn ** 2], axis=1)
        j_sr = np.concatenate([gr, -prm.L * gr], axis=1)
        jvals = np.concatenate([j_up.ravel(), j_lo.ravel(), j_cp.ravel(), j_cn.ravel(), gf.ravel(), j_sr.ravel()])
        return vals, jvals

    def build_qp(self, z, lin: Linearization, rho: float = SLACK_PENALTY) -> QpProblem:
        """QP in the step ``dz`` plus one slack per soft row: ``[dz | s]``."""
        n, m = self.n, self.n_soft
        H = sp.diags(np.concatenate([2.0 * self.qdiag, np.zeros(m)]), format="csr")
        g = np.concatenate([lin.grad, np.full(m, rho)])
        A = sp.hstack([lin.A, sp.csr_matrix((lin.A.shape[0], m))], format="csr")
        G = sp.hstack([lin.J, sp.identity(m, format="csr")], format="csr")
        lb = np.concatenate([self.lb - z, np.zeros(m)])
        ub = np.concatenate([self.ub - z, np.full(m, np.inf)])
        return QpProblem(H, g, A, -lin.eq, G, -lin.soft, lb, ub)

    def initial_guess(self) -> np.ndarray:
        X = self.ref.states.copy()
        X[0] = self.x0
        return np.clip(self.join(X, np.zeros((self.N, NU))), self.lb, self.ub)


def _dynamics_pattern(N: int):
    n_xs = (N + 1) * NX
    rows = [np.arange(NX)]
    cols = [np.arange(NX)]
    k = np.arange(N)
    # +I on x_{k+1}
    rows.append((NX * (k[:, None] + 1) + np.arange(NX)).ravel())
    cols.append((NX * (k[:, None] + 1) + np.arange(NX)).ravel())
    # -A_k on x_k (dense 6x6), -B_k on u_k (dense 6x2)
    r = NX * (k[:, None, None] + 1) + np.arange(NX)[None, :, None]
    rows.append(np.broadcast_to(r, (N, NX, NX)).ravel())
    cols.append((NX * k[:, None, None] + np.arange(NX)[None, None, :] + 0 * r).ravel())
    rows.append(np.broadcast_to(r, (N, NX, NU)).ravel())
    cols.append((n_xs + NU * k[:, None, None] + np.arange(NU)[None, None, :] + 0 * r[:, :, :1]).ravel())
    return np.concatenate(rows), np.concatenate(cols)


def _soft_pattern(N: int):
    n_xs = (N + 1) * NX
    k = np.arange(N)
    kk = np.arange(N + 1)
    rows, cols = [], []
    base = 0
    for _ in range(2):  # roll rate upper / lower: v, delta of x_k then x_{k+1}; a_k, delta_dot_k
        for end in (0, 1):
            r = base + k
            rows.append(np.repeat(r, 4))
            cols.append(np.stack([NX * (k + end) + 2, NX * (k + end) + 5, n_xs + NU * k, n_xs + NU * k + 1],
                                 axis=1).ravel())
            base += N
    for _ in range(2):  # curve speed: v_k, delta_k
        r = base + kk
        rows.append(np.repeat(r, 2))
        cols.append(np.stack([NX * kk + 2, NX * kk + 5], axis=1).ravel())
        base += N + 1
    r = base + kk  # front corridor: px, py
    rows.append(np.repeat(r, 2))
    cols.append(np.stack([NX * kk, NX * kk + 1], axis=1).ravel())
    base += N + 1
    r = base + kk  # rear corridor: px, py, cos, sin
    rows.append(np.repeat(r, 4))
    cols.append(np.stack([NX * kk, NX * kk + 1, NX * kk + 3, NX * kk + 4], axis=1).ravel())
    return np.concatenate(rows), np.concatenate(cols)


def soft_slices(N: int) -> dict[str, slice]:
    sizes = [2 * N, 2 * N, N + 1, N + 1, N + 1, N + 1]
    out, i = {}, 0
    for name, s in zip(SOFT_KINDS, sizes):
        out[name] = slice(i, i + s)
        i += s
    return out


def assemble_ocp(x0, ref: RefTrajectory, path: Path, weights: OcpWeights, limits: OcpLimits,
                 vehicle_params: VehicleParams, dt: float | None = None) -> OcpProblem:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (NX,):
        raise DimensionMismatch(f"initial state must have {NX} entries, got shape {x0.shape}")
    if ref.states.shape != (ref.N + 1, NX) or ref.inputs.shape != (ref.N, NU):
        raise DimensionMismatch("reference must hold N+1 states and N inputs")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state is not finite")
    if abs(x0[5]) > limits.delta_max + 1e-6:
        raise ValueError(f"initial steering angle {x0[5]:.4f} exceeds delta_max")
    dt = ref.dt if dt is None else dt
    if dt is None:
        raise ValueError("dt (1/f_MPC) is required when the reference does not carry it")
    # x(0) is pinned by an equality, so it must satisfy the hard boxes itself
    x0 = x0.copy()
    x0[2] = min(max(x0[2], 0.0), limits.v_max)
    x0[5] = min(max(x0[5], -limits.delta_max), limits.delta_max)
    x0[3:5] /= np.hypot(x0[3], x0[4])
    return OcpProblem(x0, ref, path, weights, limits, vehicle_params, dt)
