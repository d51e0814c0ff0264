"""Deterministic multirate closed-loop simulation.

A 200 Hz master clock drives the ground-truth plant; the encoder, GNSS receiver,
EKF and MPC fire on exact divisors of it. Every record type lands in a
:class:`RunLog` table that round-trips through CSV.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .localization import Ekf, EkfBelief, EncoderSample, GnssFix, ProcessNoise, predict, prior_belief
from .nmpc import (CommandProfile, OcpLimits, OcpSolution, OcpWeights, SqpSolver, assemble_ocp,
                   constant_profile, curve_speed_limit, synthesize_commands)
from .pathmodel import Path, path_sdf_batch, project, sample
from .refgen import HorizonParams, build_reference
from .vehicle import VehicleParams, roll_setpoint, sensor_to_front

log = logging.getLogger(__name__)

PLANT_RATE = 200.0
STALL_COUNT = 3
STALL_SLACK = 0.1
GOAL_TOLERANCE = 0.2  # m
STOP_SPEED = 0.05  # m/s


class SolverStalled(RuntimeError):
    """Raised after repeated non-converged solves with large slack; carries the partial log."""

    def __init__(self, message: str, log: "RunLog"):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class SensorConfig:
    gnss_rate: float = 10.0
    gnss_sigma: float = 0.05
    gnss_reports_R: bool = True
    encoder_rate: float = 100.0
    encoder_v_sigma: float = 0.01
    encoder_delta_sigma: float = 0.005
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.gnss_rate > 0 and self.encoder_rate > 0):
            raise ValueError("sensor rates must be positive")
        if min(self.gnss_sigma, self.encoder_v_sigma, self.encoder_delta_sigma) < 0:
            raise ValueError("sensor sigmas must be nonnegative")


@dataclass(frozen=True)
class ActuatorConfig:
    """Low-level tracking abstraction. Zero time constant or zero rate limit means ideal tracking."""
    velocity_tau: float = 0.3
    steering_rate_limit: float = 0.5
    delay: float = 0.05

    def __post_init__(self):
        if min(self.velocity_tau, self.steering_rate_limit, self.delay) < 0:
            raise ValueError("actuator parameters must be nonnegative")


@dataclass(frozen=True)
class Disturbance:
    lateral_sigma: float = 0.0  # m per sqrt(s), random walk on the rear axle
    v_bias: float = 0.0  # m/s added to the tracked velocity


@dataclass(frozen=True)
class PlantState:
    """Ground truth at the rear axle plus the actuator playheads."""
    t: float
    x: float
    y: float
    psi: float
    v: float = 0.0
    delta: float = 0.0
    profile: CommandProfile | None = None
    prev_profile: CommandProfile | None = None
    switch_t: float = -math.inf

    def sensor_point(self, params: VehicleParams) -> np.ndarray:
        return np.array([self.x + params.l_r * math.cos(self.psi), self.y + params.l_r * math.sin(self.psi)])

    def front(self, params: VehicleParams) -> np.ndarray:
        return np.array([self.x + params.L * math.cos(self.psi), self.y + params.L * math.sin(self.psi)])


def applied_command(s: PlantState, t: float, actuators: ActuatorConfig) -> tuple[float, float]:
    """Command the low-level controllers see at ``t`` after the transport delay."""
    tau = t - actuators.delay
    prof = s.profile if tau >= s.switch_t - 1e-12 else s.prev_profile
    if prof is None:
        return 0.0, 0.0
    v, d = prof(tau)
    return float(v), float(d)


def _pose_rhs(psi, v, delta, L):
    return v * math.cos(psi), v * math.sin(psi), v * math.tan(delta) / L


def step_plant(s: PlantState, profile: CommandProfile | None, dt: float, actuators: ActuatorConfig,
               params: VehicleParams, limits: OcpLimits | None = None,
               disturbance: Disturbance | None = None, rng=None) -> PlantState:
    """Advance the plant by ``dt``: actuator tracking, then rear-axle kinematics by RK4."""
    if dt > 1.0 / PLANT_RATE + 1e-12:
        raise ValueError(f"plant step {dt} exceeds {1.0 / PLANT_RATE} s")
    if profile is not s.profile:
        s = replace(s, profile=profile, prev_profile=s.profile, switch_t=s.t)
    delta_stop = (limits or OcpLimits()).delta_max
    v_cmd, d_cmd = applied_command(s, s.t, actuators)
    if disturbance is not None:
        v_cmd += disturbance.v_bias
    if actuators.velocity_tau > 0:
        v1 = s.v + (1.0 - math.exp(-dt / actuators.velocity_tau)) * (v_cmd - s.v)
    else:
        v1 = v_cmd
    v1 = max(v1, 0.0)
    if actuators.steering_rate_limit > 0:
        step = actuators.steering_rate_limit * dt
        d1 = s.delta + min(max(d_cmd - s.delta, -step), step)
    else:
        d1 = d_cmd
    d1 = min(max(d1, -delta_stop), delta_stop)

    # v and delta vary linearly across the step
    v0, d0, L = s.v, s.delta, params.L
    vm, dm = 0.5 * (v0 + v1), 0.5 * (d0 + d1)
    x, y, psi = s.x, s.y, s.psi
    k1 = _pose_rhs(psi, v0, d0, L)
    k2 = _pose_rhs(psi + 0.5 * dt * k1[2], vm, dm, L)
    k3 = _pose_rhs(psi + 0.5 * dt * k2[2], vm, dm, L)
    k4 = _pose_rhs(psi + dt * k3[2], v1, d1, L)
    x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    y += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    psi += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    if disturbance is not None and disturbance.lateral_sigma > 0 and rng is not None:
        e = disturbance.lateral_sigma * math.sqrt(dt) * float(rng.standard_normal())
        x -= e * math.sin(psi)
        y += e * math.cos(psi)
    return replace(s, t=s.t + dt, x=x, y=y, psi=psi, v=v1, delta=d1)


def gnss_measure(s: PlantState, cfg: SensorConfig, rng, params: VehicleParams | None = None) -> GnssFix:
    params = params or VehicleParams()
    z = s.sensor_point(params)
    if cfg.gnss_sigma > 0:
        z = z + cfg.gnss_sigma * rng.standard_normal(2)
    return GnssFix(z, cfg.gnss_sigma ** 2 * np.eye(2), s.t)


def encoder_measure(s: PlantState, cfg: SensorConfig, rng) -> EncoderSample:
    v = s.v + (cfg.encoder_v_sigma * float(rng.standard_normal()) if cfg.encoder_v_sigma > 0 else 0.0)
    d = s.delta + (cfg.encoder_delta_sigma * float(rng.standard_normal()) if cfg.encoder_delta_sigma > 0 else 0.0)
    return EncoderSample(max(v, 0.0), d, s.t)


# -- logging ------------------------------------------------------------------

SCHEMAS = {
    "plant": [("t", float), ("x_r", float), ("y_r", float), ("psi", float), ("v", float), ("delta", float),
              ("v_cmd", float), ("delta_cmd", float), ("phi_cmd", float)],
    "ekf": [("t", float), ("z_e", float), ("z_n", float), ("x_s", float), ("y_s", float), ("psi", float),
            ("p_xx", float), ("p_xy", float), ("p_xpsi", float), ("p_yy", float), ("p_ypsi", float),
            ("p_psipsi", float), ("true_x_s", float), ("true_y_s", float), ("true_psi", float)],
    "mpc": [("t", float), ("x0_px", float), ("x0_py", float), ("x0_v", float), ("x0_c", float), ("x0_s", float),
            ("x0_delta", float), ("s_ref", float), ("status", str), ("iterations", int), ("qp_iterations", int),
            ("kkt_residual", float), ("max_slack", float), ("cost", float), ("pred_px1", float),
            ("pred_py1", float)],
    "commands": [("t_mpc", float), ("k", int), ("tau", float), ("v", float), ("delta", float), ("a", float),
                 ("delta_dot", float)],
}


@dataclass
class RunLog:
    """Row-oriented tables keyed by record type, plus per-solve wall times.

    Wall times live outside the CSV tables so that the CSVs stay byte-identical
    between runs.
    """
    tables: dict = field(default_factory=lambda: {k: [] for k in SCHEMAS})
    wall_times: list = field(default_factory=list)
    completed: bool = False
    completion_time: float | None = None
    stale_fixes: int = 0

    def add(self, kind: str, row: tuple):
        self.tables[kind].append(row)

    def column(self, kind: str, name: str) -> np.ndarray:
        names = [c for c, _ in SCHEMAS[kind]]
        j = names.index(name)
        typ = SCHEMAS[kind][j][1]
        vals = [r[j] for r in self.tables[kind]]
        return np.array(vals, dtype=object if typ is str else typ)

    def __len__(self):
        return len(self.tables["plant"])


def _fmt(v, typ):
    if typ is float:
        return repr(float(v))
    return str(v)


def write_csvs(runlog: RunLog, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for kind, schema in SCHEMAS.items():
        p = os.path.join(out_dir, f"{kind}.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([c for c, _ in schema])
            for row in runlog.tables[kind]:
                w.writerow([_fmt(v, typ) for v, (_, typ) in zip(row, schema)])
        paths.append(p)
    return paths


def read_csvs(out_dir: str) -> RunLog:
    runlog = RunLog()
    for kind, schema in SCHEMAS.items():
        with open(os.path.join(out_dir, f"{kind}.csv"), newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != [c for c, _ in schema]:
                raise ValueError(f"{kind}.csv: unexpected header {header}")
            runlog.tables[kind] = [tuple(typ(v) for v, (_, typ) in zip(row, schema)) for row in rd]
    return runlog


# -- closed loop --------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    horizon: HorizonParams = field(default_factory=HorizonParams)
    weights: OcpWeights = field(default_factory=OcpWeights)
    limits: OcpLimits = field(default_factory=OcpLimits)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    actuators: ActuatorConfig = field(default_factory=ActuatorConfig)
    process_noise: ProcessNoise = field(default_factory=ProcessNoise)
    disturbance: Disturbance = field(default_factory=Disturbance)
    time_limit: float = 300.0
    # "command": MPC speed and steering start from the active command profile; "encoder": from the encoders
    speed_source: str = "command"
    ideal_localization: bool = False

    def __post_init__(self):
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.speed_source not in ("command", "encoder"):
            raise ValueError("speed_source must be 'command' or 'encoder'")
        for name, rate in (("gnss_rate", self.sensors.gnss_rate), ("encoder_rate", self.sensors.encoder_rate),
                           ("f_mpc", self.horizon.f_mpc)):
            ratio = PLANT_RATE / rate
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} = {rate} Hz must divide the {PLANT_RATE:g} Hz plant clock")


def _initial_plant(path: Path) -> PlantState:
    a = path.a[0]
    return PlantState(0.0, float(a[0]), float(a[1]), float(path.headings[0]))


def run_closed_loop(cfg: SimConfig, path: Path, initial: PlantState | None = None) -> RunLog:
    """Simulate until the course is completed or ``cfg.time_limit`` elapses."""
    vp, hp, lim = cfg.vehicle, cfg.horizon, cfg.limits
    seeds = np.random.SeedSequence(cfg.sensors.rng_seed).spawn(3)
    rng_gnss, rng_enc, rng_dist = (np.random.default_rng(s) for s in seeds)
    n_gnss = int(round(PLANT_RATE / cfg.sensors.gnss_rate))
    n_enc = int(round(PLANT_RATE / cfg.sensors.encoder_rate))
    n_mpc = int(round(PLANT_RATE / hp.f_mpc))
    dt = 1.0 / PLANT_RATE
    n_steps = int(round(cfg.time_limit * PLANT_RATE))

    plant = initial or _initial_plant(path)
    solver = SqpSolver()
    ekf: Ekf | None = None
    profile: CommandProfile = constant_profile(0.0, 0.0, 0.0)
    plant = replace(plant, profile=profile, prev_profile=profile, switch_t=plant.t)
    prev_sol: OcpSolution | None = None
    stalls = 0
    runlog = RunLog()

    for i in range(n_steps + 1):
        t = i * dt
        plant = replace(plant, t=t)
        if i % n_enc == 0 and ekf is not None:
            # propagate with the previous sample up to now, then hold the new one
            ekf.advance(t)
            ekf.on_encoder(encoder_measure(plant, cfg.sensors, rng_enc))
        if i % n_gnss == 0:
            fix = gnss_measure(plant, cfg.sensors, rng_gnss, vp)
            if not cfg.sensors.gnss_reports_R:
                fix = GnssFix(fix.z, max(cfg.sensors.gnss_sigma, 1e-3) ** 2 * np.eye(2), fix.t)
            if ekf is None:
                heading = sample(path, project(fix.z, path).s)[1]
                ekf = Ekf(prior_belief(fix, heading), vp, cfg.process_noise)
                ekf.on_encoder(encoder_measure(plant, cfg.sensors, rng_enc))
            else:
                ekf.on_fix(fix)
            b = ekf.belief
            P = b.cov
            true_s = plant.sensor_point(vp)
            runlog.add("ekf", (t, fix.z[0], fix.z[1], b.mean[0], b.mean[1], b.mean[2], P[0, 0], P[0, 1], P[0, 2],
                               P[1, 1], P[1, 2], P[2, 2], true_s[0], true_s[1], plant.psi))
        if i % n_mpc == 0:
            belief = _belief_now(ekf, t, plant, cfg)
            front = sensor_to_front(belief.mean, vp)
            if cfg.speed_source == "command":
                v0, d0 = (float(u) for u in profile(t))
            else:
                v0, d0 = ekf.encoder.v, ekf.encoder.delta
            x0 = np.array([front[0], front[1], v0, math.cos(front[2]), math.sin(front[2]), d0])
            ref = build_reference(path, belief, hp, vp)
            prob = assemble_ocp(x0, ref, path, cfg.weights, lim, vp, hp.dt)
            sol = solver.solve(prob, prev_sol)
            prev_sol = sol
            profile = synthesize_commands(sol, t, hp.f_mpc)
            runlog.wall_times.append(sol.wall_time)
            x0c = prob.x0
            runlog.add("mpc", (t, *x0c, float(ref.s[0]), sol.status, sol.iterations, sol.qp_iterations,
                               sol.kkt_residual, sol.max_slack, sol.cost, sol.states[1, 0], sol.states[1, 1]))
            a_dd = profile.rates(profile.t[:-1])
            for k in range(len(profile.t)):
                a = a_dd[0][k] if k < len(profile.t) - 1 else 0.0
                ddot = a_dd[1][k] if k < len(profile.t) - 1 else 0.0
                runlog.add("commands", (t, k, profile.t[k], profile.v[k], profile.delta[k], float(a), float(ddot)))
            stalls = stalls + 1 if (sol.status != "converged" and sol.max_slack > STALL_SLACK) else 0
            if stalls >= STALL_COUNT:
                runlog.stale_fixes = ekf.stale_fixes
                raise SolverStalled(f"{STALL_COUNT} consecutive non-converged solves with slack > {STALL_SLACK}"
                                    f" at t={t:.3f}", runlog)

        v_cmd, d_cmd = applied_command(plant, t, cfg.actuators)
        runlog.add("plant", (t, plant.x, plant.y, plant.psi, plant.v, plant.delta, v_cmd, d_cmd,
                             float(roll_setpoint(v_cmd, d_cmd, vp))))
        s_front = project(plant.front(vp), path).s
        if s_front >= path.total_length - GOAL_TOLERANCE and plant.v < STOP_SPEED and t > 0:
            runlog.completed = True
            runlog.completion_time = t
            break
        if i < n_steps:
            plant = step_plant(plant, profile, dt, cfg.actuators, vp, lim, cfg.disturbance, rng_dist)
    runlog.stale_fixes = ekf.stale_fixes if ekf is not None else 0
    return runlog


def _belief_now(ekf: Ekf, t: float, plant: PlantState, cfg: SimConfig) -> EkfBelief:
    """Latest belief propagated (without mutating the filter) to the control instant."""
    if cfg.ideal_localization:
        p = plant.sensor_point(cfg.vehicle)
        return EkfBelief(np.array([p[0], p[1], plant.psi]), np.zeros((3, 3)), t)
    b = ekf.belief
    if t - b.t > 1e-12:
        b = predict(b, ekf.encoder, t - b.t, cfg.vehicle, ekf.noise)
    return b


# -- evaluation ---------------------------------------------------------------

def _first_turn_s(path: Path, min_angle: float = 0.5) -> float | None:
    d = np.diff(path.headings)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    idx = np.flatnonzero(np.abs(d) >= min_angle)
    return float(path.starts[idx[0] + 1]) if len(idx) else None


def evaluate_run(runlog: RunLog, path: Path, limits: OcpLimits, vehicle_params: VehicleParams,
                 burn_in: float = 5.0) -> dict:
    """Constraint audits and tracking metrics over the true plant trajectory."""
    L = vehicle_params.L
    m: dict = {}
    pl = np.array(runlog.tables["plant"], dtype=float).reshape(-1, len(SCHEMAS["plant"]))
    if len(pl):
        t, xr, yr, psi, v, d, vc, dc = (pl[:, j] for j in range(8))
        rear = np.column_stack([xr, yr])
        front = rear + L * np.column_stack([np.cos(psi), np.sin(psi)])
        sdf_f = path_sdf_batch(front, path)[0]
        sdf_r = path_sdf_batch(rear, path)[0]
        xte = np.array([project(p, path).distance for p in front])
        phi = np.asarray(roll_setpoint(vc, dc, vehicle_params), dtype=float)
        phidot = np.abs(np.diff(phi)) / np.diff(t) if len(t) > 1 else np.zeros(0)
        m.update(
            max_cross_track=float(xte.max()),
            rms_cross_track=float(np.sqrt(np.mean(xte ** 2))),
            min_sdf_front=float(sdf_f.min()),
            min_sdf_rear=float(sdf_r.min()),
            max_v=float(v.max()),
            max_curve_speed_excess=float(np.max(v - curve_speed_limit(d, limits))),
            max_abs_roll_rate_cmd=float(phidot.max(initial=0.0)),
            duration=float(t[-1]),
        )
    m["completed"] = bool(runlog.completed)
    m["completion_time"] = runlog.completion_time

    ek = np.array(runlog.tables["ekf"], dtype=float).reshape(-1, len(SCHEMAS["ekf"]))
    if len(ek):
        te = ek[:, 0]
        z, est, truth = ek[:, 1:3], ek[:, 3:5], ek[:, 12:14]
        mask = te >= burn_in
        if mask.any():
            m["ekf_rmse"] = float(np.sqrt(np.mean(np.sum((est[mask] - truth[mask]) ** 2, axis=1))))
            m["gnss_rmse"] = float(np.sqrt(np.mean(np.sum((z[mask] - truth[mask]) ** 2, axis=1))))
        herr = np.abs((ek[:, 5] - ek[:, 14] + np.pi) % (2 * np.pi) - np.pi)
        s_turn = _first_turn_s(path)
        if s_turn is not None and len(pl):
            # first plant time at which the rear axle is 1 m past the first sharp vertex
            s_rear = np.array([project(p, path).s for p in rear[::20]])
            past = np.flatnonzero(s_rear >= s_turn + 1.0)
            if len(past):
                t_turn = float(t[::20][past[0]])
                m["first_turn_time"] = t_turn
                after = te >= t_turn
                m["max_heading_error_after_turn"] = float(herr[after].max(initial=0.0))
        min_eig = np.inf
        for r in ek:
            P = np.array([[r[6], r[7], r[8]], [r[7], r[9], r[10]], [r[8], r[10], r[11]]])
            min_eig = min(min_eig, float(np.linalg.eigvalsh(P).min()))
        m["min_cov_eigenvalue"] = min_eig

    mp = runlog.tables["mpc"]
    if mp:
        status = [r[8] for r in mp]
        m["mpc_steps"] = len(mp)
        m["mpc_converged_fraction"] = status.count("converged") / len(mp)
        m["max_slack"] = float(max(r[12] for r in mp))
        m["mean_sqp_iterations"] = float(np.mean([r[9] for r in mp]))
    if runlog.wall_times:
        w = np.array(runlog.wall_times)
        m["mean_solve_time"] = float(w.mean())
        m["p99_solve_time"] = float(np.percentile(w, 99))
        m["max_solve_time"] = float(w.max())
    m["stale_fixes"] = runlog.stale_fixes
    return m


def write_metrics(metrics: dict, out_dir: str) -> str:
    p = os.path.join(out_dir, "metrics.json")
    with open(p, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return p
