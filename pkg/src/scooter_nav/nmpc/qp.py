"""Convex QP solver: primal-dual interior point (Mehrotra predictor-corrector).

Solves::

    min  1/2 z'Hz + g'z
    s.t. A z = b,  G z >= h,  lb <= z <= ub

The Newton systems are reduced to the symmetric quasi-definite KKT matrix
``[[H + G'WG + Wb, A'], [A, -reg]]``, permuted by reverse Cuthill-McKee into
a band and factored with the band kernel. Optimal-control QPs are
block-banded, so one factorization costs O(n k^2) for band half-width k.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .. import kernels

STEP_FRACTION = 0.995
PRIMAL_REG = 1e-10
DUAL_REG = 1e-10
REFINE_STEPS = 1
CERTIFY_TOL = 1e-8  # scaled residual accepted when the target tolerance is out of reach
STALL_ITERS = 3


@dataclass
class QpProblem:
    H: object  # symmetric, dense or scipy.sparse
    g: np.ndarray
    A: object = None
    b: np.ndarray | None = None
    G: object = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.g)
        self.g = np.asarray(self.g, dtype=float)
        self.H = sp.csr_matrix(self.H, shape=(n, n))
        self.A = sp.csr_matrix((0, n)) if self.A is None else sp.csr_matrix(self.A)
        self.G = sp.csr_matrix((0, n)) if self.G is None else sp.csr_matrix(self.G)
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float)
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.A.shape[1] != n or self.G.shape[1] != n or len(self.lb) != n or len(self.ub) != n:
            raise ValueError("QP dimension mismatch")
        if self.A.shape[0] != len(self.b) or self.G.shape[0] != len(self.h):
            raise ValueError("QP constraint/right-hand-side length mismatch")
        if np.any(self.lb > self.ub):
            raise ValueError("QP bounds are inconsistent (lb > ub)")

    @property
    def n(self) -> int:
        return len(self.g)

    def objective(self, z) -> float:
        return float(0.5 * z @ (self.H @ z) + self.g @ z)


@dataclass
class QpResult:
    z: np.ndarray
    y: np.ndarray  # equality multipliers (sign: H z + g = A'y + G'lam + lam_lb - lam_ub)
    lam: np.ndarray  # G-row multipliers >= 0
    lam_lb: np.ndarray  # per-variable, zero where unbounded
    lam_ub: np.ndarray
    status: str  # "optimal" | "max_iter" | "numerical_error"
    iterations: int
    kkt: float
    objective: float


class KktStructure:
    """Band layout of the reduced KKT matrix for a fixed sparsity pattern.

    Build once per pattern; :meth:`bind` then attaches numeric values. The
    pattern is that of ``H``, ``A`` and ``G`` in CSR form (sorted indices).
    """

    def __init__(self, n: int, H: sp.csr_matrix, A: sp.csr_matrix, G: sp.csr_matrix):
        self.n = n
        self.m = A.shape[0]
        N = n + self.m
        self.size = N
        Hc = H.tocoo()
        Ac = A.tocoo()
        # pairs of columns sharing a G row
        rows, ka, kb = [], [], []
        indptr = G.indptr
        for r in range(G.shape[0]):
            lo, hi = indptr[r], indptr[r + 1]
            if hi == lo:
                continue
            idx = np.arange(lo, hi)
            ia, ib = np.triu_indices(hi - lo)
            rows.append(np.full(len(ia), r))
            ka.append(idx[ia])
            kb.append(idx[ib])
        cat = (lambda x: np.concatenate(x) if x else np.zeros(0, dtype=np.intp))
        self.pair_row = cat(rows).astype(np.intp)
        self.pair_a = cat(ka).astype(np.intp)
        self.pair_b = cat(kb).astype(np.intp)
        gi = G.indices
        pr = np.concatenate([Hc.row, gi[self.pair_a], Ac.row + n, np.arange(N)])
        pc = np.concatenate([Hc.col, gi[self.pair_b], Ac.col, np.arange(N)])
        pattern = sp.coo_matrix((np.ones(len(pr)), (pr, pc)), shape=(N, N)).tocsr()
        pattern = (pattern + pattern.T).tocsr()
        perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=np.intp)
        inv = np.empty(N, dtype=np.intp)
        inv[perm] = np.arange(N)
        self.perm = perm
        self.inv = inv
        pp = pattern.tocoo()
        self.k = int(np.max(np.abs(inv[pp.row] - inv[pp.col]))) if pp.nnz else 0

        def pos(r, c):
            ir, ic = inv[r], inv[c]
            hi_, lo_ = np.maximum(ir, ic), np.minimum(ir, ic)
            return hi_ * (self.k + 1) + self.k + lo_ - hi_

        self.pos_H = pos(Hc.row, Hc.col)
        self.H_scale = np.where(Hc.row == Hc.col, 1.0, 0.5)
        self.pos_A = pos(Ac.row + n, Ac.col)
        self.pos_pair = pos(gi[self.pair_a], gi[self.pair_b])
        self.nflat = N * (self.k + 1)
        first = np.arange(N)
        lo = np.minimum(inv[pp.row], inv[pp.col])
        hi = np.maximum(inv[pp.row], inv[pp.col])
        np.minimum.at(first, hi, lo)
        self.first = first.astype(np.intp)
        self._Hpattern = (H.indptr.copy(), H.indices.copy())
        self._Apattern = (A.indptr.copy(), A.indices.copy())
        self._Gpattern = (G.indptr.copy(), G.indices.copy())

    def matches(self, H, A, G) -> bool:
        def same(M, pat):
            return np.array_equal(M.indptr, pat[0]) and np.array_equal(M.indices, pat[1])
        return (H.shape[0] == self.n and A.shape[0] == self.m and same(H, self._Hpattern)
                and same(A, self._Apattern) and same(G, self._Gpattern))

    def base_band(self, H, A) -> np.ndarray:
        hv = H.tocoo().data * self.H_scale
        flat = np.bincount(self.pos_H, hv, self.nflat)
        flat += np.bincount(self.pos_A, A.tocoo().data, self.nflat)
        return flat

    def band(self, base, Gdata, wg) -> np.ndarray:
        flat = kernels.band_scatter(base, self.pos_pair, self.pair_row, self.pair_a, self.pair_b, Gdata, wg)
        return flat.reshape(self.size, self.k + 1)


@dataclass
class IpmData:
    """Everything the interior-point loop needs; see ``kernels.ipm_loop``."""
    H: sp.csr_matrix
    A: sp.csr_matrix
    AT: sp.csr_matrix
    G: sp.csr_matrix
    GT: sp.csr_matrix
    g: np.ndarray
    b: np.ndarray
    h: np.ndarray
    base: np.ndarray  # flat band of H and A
    pos: np.ndarray  # G'WG scatter plan
    prow: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    k: int
    perm: np.ndarray
    first: np.ndarray  # envelope of the permuted KKT pattern
    signs: np.ndarray  # expected pivot signs, permuted
    reg: np.ndarray  # static regularization, permuted
    scale_d: float
    scale_p: float
    certify_tol: float = CERTIFY_TOL
    stall_iters: int = STALL_ITERS
    refine_steps: int = REFINE_STEPS
    step_fraction: float = STEP_FRACTION


class QpSolver:
    """Interior-point solver; caches the KKT band layout across calls with equal sparsity."""

    def __init__(self, tol: float = 1e-10, max_iter: int = 100):
        self.tol = tol
        self.max_iter = max_iter
        self._structure: KktStructure | None = None

    def structure_for(self, n, H, A, G) -> KktStructure:
        s = self._structure
        if s is None or not s.matches(H, A, G):
            s = KktStructure(n, H, A, G)
            self._structure = s
        return s

    @staticmethod
    def _initial_point(qp, Gf, GfT, hf, factor, ksolve):
        """Least-squares start: minimize the objective plus ``1/2 |G z - h|^2`` subject to
        ``A z = b``, read slacks and multipliers off the residual, then shift both into
        the positive orthant and balance them (Mehrotra's heuristic)."""
        n = qp.n
        mt = Gf.shape[0]
        W = np.ones(mt)
        F, Bt = factor(W)
        sol = ksolve(F, Bt, np.concatenate([-qp.g + GfT @ hf, qp.b]))
        z, y = sol[:n], -sol[n:]
        if mt == 0:
            return z, y, np.zeros(0), np.zeros(0)
        t = Gf @ z - hf
        lam = -t.copy()
        t += max(-1.5 * float(t.min()), 0.0)
        lam += max(-1.5 * float(lam.min()), 0.0)
        tl = float(t @ lam)
        if tl <= 0.0:
            t += 1.0
            lam += 1.0
            tl = float(t @ lam)
        return z, y, t + 0.5 * tl / float(lam.sum()), lam + 0.5 * tl / float(t.sum())

    def solve(self, qp: QpProblem, z0=None) -> QpResult:
        """Solve ``qp``; ``z0`` is accepted for API symmetry but interior-point
        iterations start from their own least-squares point."""
        n, m = qp.n, qp.A.shape[0]
        L = np.flatnonzero(np.isfinite(qp.lb))
        U = np.flatnonzero(np.isfinite(qp.ub))
        mg = qp.G.shape[0]
        # bounds become single-entry inequality rows
        Gf = sp.vstack([
            qp.G,
            sp.csr_matrix((np.ones(len(L)), (np.arange(len(L)), L)), shape=(len(L), n)),
            sp.csr_matrix((-np.ones(len(U)), (np.arange(len(U)), U)), shape=(len(U), n)),
        ], format="csr")
        Gf.sort_indices()
        hf = np.concatenate([qp.h, qp.lb[L], -qp.ub[U]])
        H, A = qp.H, qp.A
        H.sort_indices()
        A.sort_indices()
        st = self.structure_for(qp.n, H, A, Gf)
        GfT = Gf.T.tocsr()
        AT = A.T.tocsr()
        mt = Gf.shape[0]
        base = st.base_band(H, A)
        Gdata = np.ascontiguousarray(Gf.data, dtype=float)
        reg = np.concatenate([np.full(n, PRIMAL_REG), np.full(m, -DUAL_REG)])
        signs = np.concatenate([np.ones(n), -np.ones(m)])[st.perm]
        reg_p = reg[st.perm]

        def factor(W):
            Bt = st.band(base, Gdata, W)
            return kernels.band_factor(Bt, signs, reg_p), Bt

        def ksolve(F, Bt, r):
            rp = r[st.perm]
            x = kernels.band_solve(F, rp)
            tol = 1e-14 * (1.0 + np.max(np.abs(rp)))
            for _ in range(REFINE_STEPS):
                res = rp - kernels.band_matvec(Bt, x, getattr(F, "first", None))
                if np.max(np.abs(res)) <= tol:
                    break
                x += kernels.band_solve(F, res)
            return x[st.inv]

        z, y, t, lam = self._initial_point(qp, Gf, GfT, hf, factor, ksolve)
        data = IpmData(H, A, AT, Gf, GfT, qp.g, qp.b, hf, base, st.pos_pair, st.pair_row, st.pair_a, st.pair_b,
                       st.k, st.perm, st.first, signs, reg_p,
                       scale_d=1.0 + np.max(np.abs(qp.g), initial=0.0),
                       scale_p=1.0 + max(np.max(np.abs(qp.b), initial=0.0), np.max(np.abs(hf), initial=0.0)))
        arrays = [np.ascontiguousarray(v, dtype=float) for v in (z, y, t, lam)]
        code, it, self.trace = kernels.ipm_loop(data, *arrays, self.tol, self.max_iter)
        z, y, t, lam = arrays
        status = ("optimal", "max_iter", "numerical_error")[code]
        z = np.clip(z, qp.lb, qp.ub)
        lam_lb = np.zeros(n)
        lam_ub = np.zeros(n)
        lam_lb[L] = lam[mg:mg + len(L)]
        lam_ub[U] = lam[mg + len(L):]
        res = QpResult(z, y, lam[:mg].copy(), lam_lb, lam_ub, status, it, 0.0, qp.objective(z))
        res.kkt = kkt_residual(qp, res)
        return res


def kkt_residual(qp: QpProblem, r: QpResult) -> float:
    """Max-norm of stationarity, primal infeasibility, dual sign and complementarity."""
    z = r.z
    stat = qp.H @ z + qp.g - qp.A.T @ r.y - qp.G.T @ r.lam - r.lam_lb + r.lam_ub
    parts = [np.abs(stat)]
    if qp.A.shape[0]:
        parts.append(np.abs(qp.A @ z - qp.b))
    if qp.G.shape[0]:
        gap = qp.G @ z - qp.h
        parts += [np.maximum(-gap, 0), np.abs(r.lam * gap), np.maximum(-r.lam, 0)]
    fl = np.isfinite(qp.lb)
    fu = np.isfinite(qp.ub)
    parts += [np.abs(r.lam_lb[fl] * (z[fl] - qp.lb[fl])), np.abs(r.lam_ub[fu] * (qp.ub[fu] - z[fu]))]
    return float(max((np.max(p, initial=0.0) for p in parts), default=0.0))


def solve_qp(qp: QpProblem, z0=None, tol: float = 1e-10, max_iter: int = 100) -> QpResult:
    return QpSolver(tol, max_iter).solve(qp, z0)
