"""GNSS + encoder extended Kalman filter on the antenna-point single-track model."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .vehicle import VehicleParams, ekf_dynamics, ekf_jacobian

log = logging.getLogger(__name__)

H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
INITIAL_HEADING_SIGMA = 0.5  # rad
MIN_BASELINE = 0.2  # m
MAX_DT = 0.5  # s
MAX_INNOVATION_COND = 1e12


class LocalizationError(ValueError):
    pass


class InvalidDt(LocalizationError):
    pass


class SingularInnovation(LocalizationError):
    pass


class InsufficientBaseline(LocalizationError):
    pass


@dataclass(frozen=True)
class EkfBelief:
    mean: np.ndarray  # [p_s_x, p_s_y, psi], psi unwrapped
    cov: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class GnssFix:
    z: np.ndarray
    R: np.ndarray
    t: float = 0.0

    @classmethod
    def isotropic(cls, z, sigma: float, t: float = 0.0) -> "GnssFix":
        return cls(np.asarray(z, dtype=float), sigma * sigma * np.eye(2), t)


@dataclass(frozen=True)
class EncoderSample:
    v: float
    delta: float
    t: float = 0.0


@dataclass(frozen=True)
class ProcessNoise:
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.02]))  # per second

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (3, 3) or not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("process noise must be a symmetric PSD 3x3 matrix")


def _sym(P):
    return 0.5 * (P + P.T)


def predict(b: EkfBelief, enc: EncoderSample, dt: float, params: VehicleParams,
            noise: ProcessNoise | None = None) -> EkfBelief:
    """Euler-discretized propagation of mean and covariance over ``dt``."""
    if not 0.0 < dt <= MAX_DT:
        raise InvalidDt(f"dt must lie in (0, {MAX_DT}], got {dt}")
    Q = (noise or ProcessNoise()).Q
    m = b.mean
    F = np.eye(3) + dt * ekf_jacobian(m, enc.v, enc.delta, params)
    mean = m + dt * ekf_dynamics(m, enc.v, enc.delta, params)
    cov = _sym(F @ b.cov @ F.T + dt * Q)
    return EkfBelief(mean, cov, b.t + dt)


def update(b: EkfBelief, fix: GnssFix) -> EkfBelief:
    """Linear position update in Joseph form."""
    P = b.cov
    S = H @ P @ H.T + fix.R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_INNOVATION_COND:
        raise SingularInnovation(f"innovation covariance is singular: {S}")
    K = np.linalg.solve(S, H @ P).T
    mean = b.mean + K @ (np.asarray(fix.z, dtype=float) - H @ b.mean)
    IKH = np.eye(3) - K @ H
    cov = _sym(IKH @ P @ IKH.T + K @ fix.R @ K.T)
    return EkfBelief(mean, cov, max(b.t, fix.t))


def initialize(fixes) -> EkfBelief:
    """Belief from the first and last of at least two fixes (heading from their displacement)."""
    fixes = list(fixes)
    if len(fixes) < 2:
        raise InsufficientBaseline("need at least two GNSS fixes")
    d = np.asarray(fixes[-1].z, dtype=float) - np.asarray(fixes[0].z, dtype=float)
    if math.hypot(*d) < MIN_BASELINE:
        raise InsufficientBaseline(f"fix baseline {math.hypot(*d):.3f} m is below {MIN_BASELINE} m")
    last = fixes[-1]
    mean = np.array([last.z[0], last.z[1], math.atan2(d[1], d[0])], dtype=float)
    cov = np.zeros((3, 3))
    cov[:2, :2] = last.R
    cov[2, 2] = INITIAL_HEADING_SIGMA ** 2
    return EkfBelief(mean, cov, last.t)


def prior_belief(fix: GnssFix, heading: float, heading_sigma: float = INITIAL_HEADING_SIGMA) -> EkfBelief:
    """Belief from a single fix plus a heading prior (vehicle at rest, pose roughly known)."""
    cov = np.zeros((3, 3))
    cov[:2, :2] = fix.R
    cov[2, 2] = heading_sigma ** 2
    return EkfBelief(np.array([fix.z[0], fix.z[1], heading], dtype=float), cov, fix.t)


class Ekf:
    """Sequential filter driven by a scheduler.

    Keeps the latest encoder sample (zero-order hold) and discards fixes older
    than the belief, counting them in ``stale_fixes``.
    """

    def __init__(self, belief: EkfBelief, params: VehicleParams, noise: ProcessNoise | None = None):
        self.belief = belief
        self.params = params
        self.noise = noise or ProcessNoise()
        self.encoder = EncoderSample(0.0, 0.0, belief.t)
        self.stale_fixes = 0

    def on_encoder(self, enc: EncoderSample):
        self.encoder = enc

    def advance(self, t: float):
        """Predict-only propagation to time ``t`` in steps of at most ``MAX_DT``."""
        while t - self.belief.t > 1e-12:
            dt = min(t - self.belief.t, MAX_DT)
            self.belief = predict(self.belief, self.encoder, dt, self.params, self.noise)
        return self.belief

    def on_fix(self, fix: GnssFix):
        if fix.t < self.belief.t - 1e-9:
            self.stale_fixes += 1
            log.warning("discarding GNSS fix at t=%.3f older than belief t=%.3f", fix.t, self.belief.t)
            return self.belief
        self.advance(fix.t)
        self.belief = update(self.belief, fix)
        return self.belief
