"""Compare the compiled kernels with the numpy/LAPACK fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times the band factor and solve on a quasi-definite band matrix of OCP size,
the vectorized corridor value, a small dense QP and one full SQP solve of the
horizon problem. Backends are swapped by rebinding the names in
``scooter_nav.kernels``, which is where every caller looks them up.
"""
from __future__ import annotations

import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from scooter_nav import _fallback, kernels
from scooter_nav.nmpc import OcpLimits, OcpWeights, SqpSolver, assemble_ocp
from scooter_nav.nmpc.qp import QpProblem, QpSolver
from scooter_nav.pathmodel import build_path, path_sdf_batch
from scooter_nav.refgen import HorizonParams, reference_from_arclength
from scooter_nav.vehicle import VehicleParams

NAMES = ("band_factor", "band_solve", "band_matvec", "path_sdf", "csr_matvec", "band_scatter", "max_step",
         "ipm_loop")


@contextmanager
def backend(name: str):
    mod = kernels.backend_module(name)
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(mod, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def quasi_definite_band(rng, n=900, k=16):
    signs = np.where(np.arange(n) % 3 == 2, -1.0, 1.0)
    B = np.zeros((n, k + 1))
    B[:, :k] = rng.normal(scale=0.1, size=(n, k))
    for i in range(k):
        B[: k - i, i] = 0.0
    B[:, k] = signs * (2.0 + rng.uniform(size=n))
    return B, signs


def cases(rng):
    B, signs = quasi_definite_band(rng)
    rhs = rng.normal(size=len(B))

    def band():
        kernels.band_solve(kernels.band_factor(B, signs), rhs)

    path = build_path(np.cumsum(rng.uniform(-5, 5, size=(11, 2)), axis=0), 0.75)
    pts = rng.uniform(-20, 20, size=(10_000, 2))

    def sdf():
        path_sdf_batch(pts, path)

    n = 40
    M = rng.normal(size=(n, n))
    qp = QpProblem(M @ M.T + np.eye(n), rng.normal(size=n), rng.normal(size=(5, n)), rng.normal(size=5),
                   rng.normal(size=(20, n)), rng.normal(size=20) - 3.0, -np.ones(n), np.ones(n))

    def dense_qp():
        QpSolver().solve(qp)

    corridor = build_path([(0, 0), (12, 0), (12, 12)], 0.75)
    hp = HorizonParams()
    ref = reference_from_arclength(corridor, 0.5, hp)
    x0 = ref.states[0].copy()
    x0[1] += 0.3
    prob = assemble_ocp(x0, ref, corridor, OcpWeights(), OcpLimits(), VehicleParams())

    def sqp():
        SqpSolver().solve(prob)

    return {"band factor+solve (n=900, k=16)": band, "path_sdf (1e4 pts, 10 segs)": sdf,
            "dense QP (n=40)": dense_qp, "SQP horizon solve (N=68)": sqp}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    names = ["python"]
    try:
        kernels.backend_module("compiled")
        names.insert(0, "compiled")
    except ImportError:
        print("compiled kernels unavailable; timing the fallback only")
    table = {}
    for be in names:
        with backend(be):
            for label, fn in cases(np.random.default_rng(0)).items():
                fn()  # warm-up
                t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
                table.setdefault(label, {})[be] = t
    print(f"{'case':<34}" + "".join(f"{b:>14}" for b in names) + ("     speed-up" if len(names) > 1 else ""))
    for label, row in table.items():
        line = f"{label:<34}" + "".join(f"{1e3 * row[b]:>11.3f} ms" for b in names)
        if len(names) > 1:
            line += f"{row['python'] / row['compiled']:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
