"""Low-level command synthesis from an optimal input sequence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..vehicle import A_IN, DD_IN, D, V


@dataclass(frozen=True)
class CommandProfile:
    """Piecewise-linear v and delta commands through knots at ``t0 + k*dt``.

    Held constant outside the knot range.
    """
    t: np.ndarray
    v: np.ndarray
    delta: np.ndarray

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def __call__(self, tau):
        return np.interp(tau, self.t, self.v), np.interp(tau, self.t, self.delta)

    def rates(self, tau):
        """Slopes (a, delta_dot) of the segment containing ``tau`` (zero outside)."""
        tau = np.asarray(tau, dtype=float)
        k = np.searchsorted(self.t, tau, side="right") - 1
        inside = (k >= 0) & (k < len(self.t) - 1)
        k = np.clip(k, 0, len(self.t) - 2)
        dt = self.t[k + 1] - self.t[k]
        a = np.where(inside, (self.v[k + 1] - self.v[k]) / dt, 0.0)
        dd = np.where(inside, (self.delta[k + 1] - self.delta[k]) / dt, 0.0)
        return a, dd


def constant_profile(v: float, delta: float, t: float = 0.0) -> CommandProfile:
    return CommandProfile(np.array([t, t + 1.0]), np.array([v, v], dtype=float), np.array([delta, delta], dtype=float))


def synthesize_commands(sol, t: float, f_mpc: float) -> CommandProfile:
    """Integrate the zero-order-hold inputs from the stage-0 v and delta."""
    if sol.status == "infeasible_qp":
        raise ValueError("cannot synthesize commands from an infeasible solve")
    dt = 1.0 / f_mpc
    u = np.asarray(sol.inputs, dtype=float)
    x0 = np.asarray(sol.states[0], dtype=float)
    n = len(u)
    v = np.empty(n + 1)
    d = np.empty(n + 1)
    v[0], d[0] = x0[V], x0[D]
    v[1:] = x0[V] + np.cumsum(u[:, A_IN] * dt)
    d[1:] = x0[D] + np.cumsum(u[:, DD_IN] * dt)
    return CommandProfile(t + dt * np.arange(n + 1), v, d)
