"""Static SVG figures of a run: corridor and trajectory, speed and steering, roll set point."""
from __future__ import annotations

import os

import numpy as np

from .nmpc import OcpLimits, curve_speed_limit
from .pathmodel import Path
from .sim import SCHEMAS, RunLog
from .vehicle import VehicleParams


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "scooter-nav"
    return plt


def _save(fig, file: str):
    fig.savefig(file, format="svg", metadata={"Date": None})
    fig.clf()


def _table(runlog: RunLog, kind: str) -> np.ndarray:
    rows = runlog.tables[kind]
    return np.array(rows, dtype=float).reshape(-1, len(SCHEMAS[kind]))


def _corridor(ax, path: Path):
    from matplotlib.patches import Circle, Polygon
    for a, b, w in zip(path.a, path.b, path.w):
        d = (b - a) / np.linalg.norm(b - a)
        nrm = np.array([-d[1], d[0]]) * w
        ax.add_patch(Polygon([a + nrm, b + nrm, b - nrm, a - nrm], closed=True, color="0.88", lw=0))
        for c in (a, b):
            ax.add_patch(Circle(c, w, color="0.88", lw=0))
    wp = path.waypoints
    ax.plot(wp[:, 0], wp[:, 1], "--", color="0.5", lw=0.8, label="path")


def plot_position(runlog: RunLog, path: Path, params: VehicleParams, file: str):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 6))
    _corridor(ax, path)
    pl = _table(runlog, "plant")
    if len(pl):
        rear = pl[:, 1:3]
        front = rear + params.L * np.column_stack([np.cos(pl[:, 3]), np.sin(pl[:, 3])])
        ax.plot(front[:, 0], front[:, 1], lw=1.2, label="front axle")
        ax.plot(rear[:, 0], rear[:, 1], lw=1.0, label="rear axle")
    ek = _table(runlog, "ekf")
    if len(ek):
        ax.plot(ek[:, 1], ek[:, 2], ".", ms=1.5, color="0.3", label="GNSS")
        ax.plot(ek[:, 3], ek[:, 4], lw=0.8, label="estimate")
    ax.set_aspect("equal")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.legend(loc="best", fontsize=7)
    _save(fig, file)
    plt.close(fig)


def plot_vel_steer(runlog: RunLog, limits: OcpLimits, file: str):
    plt = _plt()
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    pl = _table(runlog, "plant")
    if len(pl):
        t = pl[:, 0]
        a1.plot(t, pl[:, 4], label="v")
        a1.plot(t, pl[:, 6], lw=0.8, label="v_cmd")
        a1.plot(t, curve_speed_limit(pl[:, 5], limits), "--", lw=0.8, label="curve limit")
        a2.plot(t, pl[:, 5], label="delta")
        a2.plot(t, pl[:, 7], lw=0.8, label="delta_cmd")
    a1.set_ylabel("v [m/s]")
    a2.set_ylabel("delta [rad]")
    a2.set_xlabel("t [s]")
    a1.legend(fontsize=7)
    a2.legend(fontsize=7)
    _save(fig, file)
    plt.close(fig)


def plot_roll(runlog: RunLog, limits: OcpLimits, file: str):
    plt = _plt()
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    pl = _table(runlog, "plant")
    if len(pl) > 1:
        t, phi = pl[:, 0], pl[:, 8]
        a1.plot(t, phi)
        a2.plot(t[1:], np.diff(phi) / np.diff(t), lw=0.8)
        for s in (1, -1):
            a2.axhline(s * limits.roll_rate_max, ls="--", color="0.4", lw=0.8)
    a1.set_ylabel("phi_cmd [rad]")
    a2.set_ylabel("phi_cmd rate [rad/s]")
    a2.set_xlabel("t [s]")
    _save(fig, file)
    plt.close(fig)


def plot_estimate(times, est, fixes, file: str):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 6))
    fixes = np.asarray(fixes, dtype=float).reshape(-1, 2)
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    if len(fixes):
        ax.plot(fixes[:, 0], fixes[:, 1], ".", ms=2, color="0.4", label="GNSS")
    if len(est):
        ax.plot(est[:, 0], est[:, 1], lw=1.0, label="estimate")
    ax.set_aspect("equal")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.legend(fontsize=7)
    _save(fig, file)
    plt.close(fig)


def write_run_plots(runlog: RunLog, path: Path, limits: OcpLimits, params: VehicleParams, out_dir: str) -> list[str]:
    files = [os.path.join(out_dir, n) for n in ("position.svg", "vel_steer.svg", "roll.svg")]
    plot_position(runlog, path, params, files[0])
    plot_vel_steer(runlog, limits, files[1])
    plot_roll(runlog, limits, files[2])
    return files
