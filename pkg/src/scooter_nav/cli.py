"""Command-line front end.

``scooter-nav run --config FILE [--seed N] [--out DIR]``
``scooter-nav check-path FILE``
``scooter-nav replay --config FILE --log CSV [--out DIR]``

Exit codes: 0 success, 1 configuration or input error, 2 solver stalled,
3 time limit reached before the course was completed.

Sensor-log CSV columns: ``t_s, kind, z_e, z_n, r_var, v, delta`` where ``kind``
is ``gnss`` (uses ``z_e, z_n, r_var``) or ``enc`` (uses ``v, delta``); unused
fields are left empty.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, load_config, load_run
from .localization import (Ekf, EncoderSample, GnssFix, InsufficientBaseline, LocalizationError, ProcessNoise,
                           initialize)
from .pathmodel import PathError, load_path
from .sim import (SolverStalled, evaluate_run, run_closed_loop, write_csvs, write_metrics)
from .vehicle import VehicleParams

log = logging.getLogger("scooter_nav")

EXIT_OK, EXIT_CONFIG, EXIT_STALLED, EXIT_INCOMPLETE = 0, 1, 2, 3
SENSOR_LOG_COLUMNS = ["t_s", "kind", "z_e", "z_n", "r_var", "v", "delta"]
REPLAY_COLUMNS = ["t", "z_e", "z_n", "x_s", "y_s", "psi", "p_xx", "p_xy", "p_xpsi", "p_yy", "p_ypsi", "p_psipsi"]


@dataclass(frozen=True)
class SensorRow:
    t: float
    kind: str
    z: tuple | None = None
    r_var: float | None = None
    v: float | None = None
    delta: float | None = None


def read_sensor_log(file) -> list[SensorRow]:
    rows = []
    with open(file, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or [c.strip() for c in rd.fieldnames] != SENSOR_LOG_COLUMNS:
            raise ValueError(f"sensor log header must be {','.join(SENSOR_LOG_COLUMNS)}")
        for n, r in enumerate(rd, start=2):
            kind = r["kind"].strip()
            try:
                if kind == "gnss":
                    rows.append(SensorRow(float(r["t_s"]), kind, (float(r["z_e"]), float(r["z_n"])), float(r["r_var"])))
                elif kind == "enc":
                    rows.append(SensorRow(float(r["t_s"]), kind, v=float(r["v"]), delta=float(r["delta"])))
                else:
                    raise ValueError(f"unknown kind {kind!r}")
            except (TypeError, ValueError) as e:
                raise ValueError(f"sensor log line {n}: {e}") from None
    return rows


def write_sensor_log(rows, file):
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENSOR_LOG_COLUMNS)
        for r in rows:
            if r.kind == "gnss":
                w.writerow([repr(r.t), "gnss", repr(r.z[0]), repr(r.z[1]), repr(r.r_var), "", ""])
            else:
                w.writerow([repr(r.t), "enc", "", "", "", repr(r.v), repr(r.delta)])


@dataclass
class ReplayResult:
    rows: list  # one tuple per GNSS update, columns REPLAY_COLUMNS
    skipped: int  # out-of-order rows
    fixes: list


def replay_sensor_log(rows, params: VehicleParams | None = None, noise: ProcessNoise | None = None) -> ReplayResult:
    """Localization-only pass over logged sensor rows.

    The filter starts once the buffered fixes span the minimum baseline.
    Rows whose timestamp precedes the last accepted one are skipped and counted.
    """
    if not rows:
        raise ValueError("sensor log is empty")
    params = params or VehicleParams()
    ekf = None
    buf = []
    enc = EncoderSample(0.0, 0.0, rows[0].t)
    out, fixes = [], []
    skipped = 0
    last_t = -np.inf
    for r in rows:
        if r.t < last_t:
            skipped += 1
            log.warning("skipping out-of-order %s row at t=%.3f (last t=%.3f)", r.kind, r.t, last_t)
            continue
        last_t = r.t
        if r.kind == "enc":
            enc = EncoderSample(r.v, r.delta, r.t)
            if ekf is not None:
                ekf.advance(r.t)
                ekf.on_encoder(enc)
            continue
        fix = GnssFix(np.array(r.z, dtype=float), r.r_var * np.eye(2), r.t)
        fixes.append(fix.z)
        if ekf is None:
            buf.append(fix)
            try:
                b = initialize([buf[0], fix])
            except InsufficientBaseline:
                continue
            ekf = Ekf(b, params, noise)
            ekf.on_encoder(enc)
        else:
            ekf.on_fix(fix)
        b = ekf.belief
        P = b.cov
        out.append((r.t, fix.z[0], fix.z[1], b.mean[0], b.mean[1], b.mean[2],
                    P[0, 0], P[0, 1], P[0, 2], P[1, 1], P[1, 2], P[2, 2]))
    if ekf is None:
        raise InsufficientBaseline("GNSS fixes never spanned the minimum baseline; filter not initialized")
    return ReplayResult(out, skipped, fixes)


# -- commands -----------------------------------------------------------------

def cmd_run(config: str, seed: int | None = None, out: str | None = None) -> int:
    try:
        cfg, path = load_run(config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if seed is not None:
        cfg = cfg.with_seed(seed)
    out_dir = out or cfg.output_dir
    code = EXIT_OK
    try:
        runlog = run_closed_loop(cfg.sim, path)
    except SolverStalled as e:
        print(f"error: solver stalled: {e}", file=sys.stderr)
        runlog = e.log
        code = EXIT_STALLED
    from .plots import write_run_plots
    os.makedirs(out_dir, exist_ok=True)
    write_csvs(runlog, out_dir)
    metrics = evaluate_run(runlog, path, cfg.sim.limits, cfg.sim.vehicle)
    write_metrics(metrics, out_dir)
    write_run_plots(runlog, path, cfg.sim.limits, cfg.sim.vehicle, out_dir)
    if code == EXIT_OK and not runlog.completed:
        print(f"warning: time limit {cfg.sim.time_limit:g} s reached before completing the course", file=sys.stderr)
        code = EXIT_INCOMPLETE
    print(f"wrote {out_dir}: completed={metrics['completed']} "
          f"min_sdf_front={metrics.get('min_sdf_front', float('nan')):.4f} "
          f"min_sdf_rear={metrics.get('min_sdf_rear', float('nan')):.4f} max_v={metrics.get('max_v', 0.0):.4f}")
    return code


def cmd_check_path(file: str) -> int:
    try:
        path, _ = load_path(file)
    except OSError as e:
        print(f"error: cannot read {file}: {e.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except PathError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as e:
        print(f"error: invalid path document: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"segments: {len(path.lengths)}")
    print(f"total length: {path.total_length:.3f} m")
    print(f"min half-width: {float(path.w.min()):.3f} m")
    print(f"{'#':>3} {'start_e':>9} {'start_n':>9} {'end_e':>9} {'end_n':>9} {'length':>8} {'heading':>8} {'w':>6}")
    for i in range(len(path.lengths)):
        a, b = path.a[i], path.b[i]
        print(f"{i:>3} {a[0]:>9.3f} {a[1]:>9.3f} {b[0]:>9.3f} {b[1]:>9.3f} {path.lengths[i]:>8.3f} "
              f"{path.headings[i]:>8.4f} {path.w[i]:>6.3f}")
    return EXIT_OK


def cmd_replay(config: str, log_file: str, out: str | None = None) -> int:
    try:
        cfg = load_config(config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = read_sensor_log(log_file)
        res = replay_sensor_log(rows, cfg.sim.vehicle, cfg.sim.process_noise)
    except OSError as e:
        print(f"error: cannot read {log_file}: {e.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, LocalizationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ekf.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_COLUMNS)
        for r in res.rows:
            w.writerow([repr(float(v)) for v in r])
    from .plots import plot_estimate
    plot_estimate([r[0] for r in res.rows], [r[3:6] for r in res.rows], res.fixes, os.path.join(out_dir, "estimate.svg"))
    if res.skipped:
        print(f"warning: skipped {res.skipped} out-of-order row(s)", file=sys.stderr)
    print(f"wrote {out_dir}: {len(res.rows)} estimates, {res.skipped} skipped")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scooter-nav", description="Corridor-following NMPC simulation tools")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate a closed-loop run")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    c = sub.add_parser("check-path", help="validate a path file")
    c.add_argument("file")
    rp = sub.add_parser("replay", help="run localization over a sensor log")
    rp.add_argument("--config", required=True)
    rp.add_argument("--log", required=True)
    rp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.out)
    if args.command == "check-path":
        return cmd_check_path(args.file)
    return cmd_replay(args.config, args.log, args.out)


if __name__ == "__main__":
    sys.exit(main())
