"""Local reference trajectory: project onto the path, look ahead, resample in time."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .localization import EkfBelief
from .pathmodel import Path, project, sample_many
from .vehicle import NU, NX, VehicleParams, sensor_to_front

REF_SPEED_FACTOR = 0.9


@dataclass(frozen=True)
class HorizonParams:
    v_max: float = 0.7
    f_mpc: float = 8.0
    horizon_length_m: float = 6.0
    lookahead_factor: float = 0.9

    def __post_init__(self):
        for name in ("v_max", "f_mpc", "horizon_length_m", "lookahead_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if horizon(self)[1] < 1:
            raise ValueError("horizon has fewer than one step; raise f_mpc or horizon_length_m")

    @property
    def dt(self) -> float:
        return 1.0 / self.f_mpc


@dataclass(frozen=True)
class RefTrajectory:
    states: np.ndarray  # (N+1, 6)
    inputs: np.ndarray  # (N, 2), zeros
    t: float
    s: np.ndarray  # (N+1,) unclamped arc lengths
    dt: float | None = None  # stage length 1/f_MPC

    @property
    def N(self) -> int:
        return len(self.inputs)


def horizon(params: HorizonParams) -> tuple[float, int, float]:
    """Prediction horizon ``T`` [s], step count ``N`` and look-ahead distance ``d`` [m]."""
    T = params.horizon_length_m / params.v_max
    # 1e-9 guards floor against T*f landing a hair under an integer
    N = int(math.floor(T * params.f_mpc + 1e-9))
    d = params.lookahead_factor * params.v_max * T
    return T, N, d


def reference_from_arclength(path: Path, s0: float, params: HorizonParams, t: float = 0.0) -> RefTrajectory:
    _, N, d = horizon(params)
    s = s0 + np.arange(N + 1) * (d / N)
    pts, psi = sample_many(path, s)
    states = np.zeros((N + 1, NX))
    states[:, 0:2] = pts
    states[:, 2] = np.where(s >= path.total_length, 0.0, REF_SPEED_FACTOR * params.v_max)
    states[:, 3] = np.cos(psi)
    states[:, 4] = np.sin(psi)
    return RefTrajectory(states, np.zeros((N, NU)), t, s, params.dt)


def build_reference(path: Path, estimate: EkfBelief, params: HorizonParams,
                    vehicle_params: VehicleParams) -> RefTrajectory:
    front = sensor_to_front(estimate.mean, vehicle_params)
    if not np.all(np.isfinite(front)):
        raise ValueError("estimate is not finite")
    s0 = project(front[:2], path).s
    return reference_from_arclength(path, s0, params, estimate.t)
