"""Sequential quadratic programming for the multiple-shooting OCP.

Gauss-Newton Hessian (the tracking cost's exact Hessian), exact constraint
Jacobians, interior-point QP subproblems, and a backtracking line search on
the L1 exact-penalty merit function.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..vehicle import NU, NX, rk4_sensitivities
from .ocp import SLACK_PENALTY, OcpProblem, soft_slices
from .qp import QpSolver

KKT_TOL = 1e-5
DEFECT_TOL = 1e-8
MAX_ITER = 30
LS_FACTOR = 0.5
LS_MIN_STEP = 1e-4
ARMIJO = 1e-4


@dataclass
class OcpSolution:
    states: np.ndarray  # (N+1, 6)
    inputs: np.ndarray  # (N, 2)
    slacks: dict  # per constraint kind: max violation
    kkt_residual: float
    iterations: int
    status: str  # "converged" | "max_iter" | "infeasible_qp"
    cost: float = 0.0
    merit_history: list = field(default_factory=list)
    wall_time: float = 0.0
    qp_iterations: int = 0

    @property
    def max_slack(self) -> float:
        return max(self.slacks.values(), default=0.0)


def shift(sol: OcpSolution) -> tuple[np.ndarray, np.ndarray]:
    """Drop the first stage and repeat the last one."""
    X = np.vstack([sol.states[1:], sol.states[-1:]])
    U = np.vstack([sol.inputs[1:], sol.inputs[-1:]])
    return X, U


class SqpSolver:
    """Owns the QP workspace; one solve at a time."""

    def __init__(self, kkt_tol: float = KKT_TOL, max_iter: int = MAX_ITER, defect_tol: float = DEFECT_TOL,
                 qp_tol: float = 1e-9):
        self.kkt_tol = kkt_tol
        self.max_iter = max_iter
        self.defect_tol = defect_tol
        self.qp = QpSolver(tol=qp_tol)

    def solve(self, prob: OcpProblem, warm: OcpSolution | None = None) -> OcpSolution:
        t_start = time.perf_counter()
        if warm is not None and warm.states.shape == (prob.N + 1, NX):
            X, U = shift(warm)
            z = np.clip(prob.join(X, U), prob.lb, prob.ub)
        else:
            z = prob.initial_guess()
        n = prob.n
        rho = SLACK_PENALTY
        nu = 0.0
        status = "max_iter"
        kkt = np.inf
        history = []
        self.steps = []
        best = None
        qp_its = 0
        it = 0
        for it in range(1, self.max_iter + 1):
            lin = prob.linearize(z)
            qp = prob.build_qp(z, lin, rho)
            res = self.qp.solve(qp)
            qp_its += res.iterations
            if res.status != "optimal" and res.kkt > 1e-6:
                status = "infeasible_qp"
                break
            dz = res.z[:n]
            lam = res.lam
            y = res.y
            # NLP first-order conditions at z with the QP multipliers
            stat = lin.grad - lin.A.T @ y - lin.J.T @ lam - res.lam_lb[:n] + res.lam_ub[:n]
            c = lin.soft
            comp_soft = np.where(c >= 0, lam * c, (rho - lam) * (-c))
            fl = np.isfinite(prob.lb)
            fu = np.isfinite(prob.ub)
            comp_box = np.concatenate([res.lam_lb[:n][fl] * (z[fl] - prob.lb[fl]),
                                       res.lam_ub[:n][fu] * (prob.ub[fu] - z[fu])])
            defect = float(np.max(np.abs(lin.eq)))
            kkt = max(float(np.max(np.abs(stat))), defect,
                      float(np.max(np.abs(comp_soft), initial=0.0)), float(np.max(np.abs(comp_box), initial=0.0)))
            nu = max(nu, 1.1 * float(np.max(np.abs(y), initial=0.0)))
            phi = lin.cost + rho * float(np.sum(np.maximum(-c, 0.0))) + nu * float(np.sum(np.abs(lin.eq)))
            history.append(phi)
            if best is None or phi < best[0]:
                best = (phi, z.copy(), kkt)
            if kkt < self.kkt_tol and defect < self.defect_tol:
                status = "converged"
                break
            lin_viol = np.maximum(-(c + lin.J @ dz), 0.0)
            D = float(lin.grad @ dz) + rho * float(np.sum(lin_viol) - np.sum(np.maximum(-c, 0.0))) \
                - nu * float(np.sum(np.abs(lin.eq)))
            D = min(D, 0.0)
            alpha = 1.0
            accepted = False
            while alpha >= LS_MIN_STEP:
                z_try = z + alpha * dz
                if prob.merit(z_try, nu, rho) <= phi + ARMIJO * alpha * D:
                    accepted = True
                    break
                alpha *= LS_FACTOR
            self.steps.append((alpha if accepted else 0.0, kkt, D))
            if not accepted:
                break
            z = np.clip(z_try, prob.lb, prob.ub)
        if status == "max_iter" and best is not None:
            z = best[1]
            kkt = best[2]
        X, U = prob.split(z)
        X, U = X.copy(), U.copy()
        c = prob.soft_values(z)
        slacks = {name: float(np.max(np.maximum(-c[sl], 0.0), initial=0.0))
                  for name, sl in soft_slices(prob.N).items()}
        return OcpSolution(X, U, slacks, float(kkt), it, status, prob.cost(z), history,
                           time.perf_counter() - t_start, qp_its)


def solve(prob: OcpProblem, warm: OcpSolution | None = None, **kwargs) -> OcpSolution:
    return SqpSolver(**kwargs).solve(prob, warm)


def dynamics_defect(prob: OcpProblem, sol: OcpSolution) -> float:
    nxt = rk4_sensitivities(sol.states[:-1], sol.inputs, prob.dt, prob.params)[0]
    return float(np.max(np.abs(sol.states[1:] - nxt)))
