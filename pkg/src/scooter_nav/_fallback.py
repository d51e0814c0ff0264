"""Pure numpy/LAPACK implementations of the hot kernels.

Same contracts as the compiled ``_kernels`` module. The banded KKT solve
uses LAPACK's pivoted band LU instead of the unpivoted LDL^T of the
compiled path, so results agree to rounding, not bit for bit.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import lapack


class BandFactor:
    __slots__ = ("lu", "piv", "kl", "n")

    def __init__(self, lu, piv, kl, n):
        self.lu = lu
        self.piv = piv
        self.kl = kl
        self.n = n


def band_factor(B: np.ndarray, signs=None, diag=None, dyn_eps: float = 1e-13,
                dyn_delta: float = 1e-7) -> BandFactor:
    """Factor the symmetric matrix held in row-band storage ``B[i, k + j - i] = K[i, j]``.

    Partial pivoting makes the pivot-sign hints unnecessary; they are accepted
    for signature parity with the compiled kernel and ignored.
    """
    n, k1 = B.shape
    k = k1 - 1
    ab = np.zeros((3 * k + 1, n))
    # lower part: K[i, j] for j <= i sits at ab[2k + i - j, j]
    for c in range(k + 1):
        off = k - c  # i - j
        if off >= n:
            continue
        ab[2 * k + off, : n - off] = B[off:, c]
        if off:
            ab[2 * k - off, off:] = B[off:, c]
    if diag is not None:
        ab[2 * k] += diag
    lu, piv, info = lapack.dgbtrf(ab, k, k)
    if info != 0:
        raise np.linalg.LinAlgError(f"band factorization failed (info={info})")
    return BandFactor(lu, piv, k, n)


def band_solve(f: BandFactor, rhs: np.ndarray) -> np.ndarray:
    x, info = lapack.dgbtrs(f.lu, f.kl, f.kl, rhs, f.piv)
    if info != 0:
        raise np.linalg.LinAlgError(f"band solve failed (info={info})")
    return x


def band_matvec(B: np.ndarray, x: np.ndarray, first=None) -> np.ndarray:
    n, k1 = B.shape
    k = k1 - 1
    y = B[:, k] * x
    for off in range(1, min(k, n - 1) + 1):
        v = B[off:, k - off]
        y[off:] += v * x[:-off]
        y[:-off] += v * x[off:]
    return y


def band_scatter(base, pos, row, ia, ib, data, w) -> np.ndarray:
    return base + np.bincount(pos, w[row] * data[ia] * data[ib], len(base))


def csr_matvec(indptr, indices, data, x) -> np.ndarray:
    m = len(indptr) - 1
    rows = np.repeat(np.arange(m), np.diff(indptr))
    return np.bincount(rows, data * x[indices], minlength=m)


def max_step(v, dv) -> float:
    """Largest ``alpha`` keeping ``v + alpha dv >= 0`` for positive ``v`` (1e300 when unbounded)."""
    neg = dv < 0
    if not np.any(neg):
        return 1e300
    return float(np.min(-v[neg] / dv[neg]))


def path_sdf(pts, a, b, w):
    """Normalized corridor value, its gradient and the active segment for each point.

    Ties between segments resolve to the larger segment index.
    """
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    rel = pts[:, None, :] - a[None, :, :]
    h = np.clip(np.einsum("mij,ij->mi", rel, d) / dd, 0.0, 1.0)
    r = rel - h[:, :, None] * d[None, :, :]
    w2 = w * w
    vals = (w2 - np.einsum("mij,mij->mi", r, r)) / w2
    # argmax of the reversed columns yields the last maximizer
    S = vals.shape[1]
    idx = S - 1 - np.argmax(vals[:, ::-1], axis=1)
    m = np.arange(len(pts))
    grad = -2.0 * r[m, idx] / w2[idx][:, None]
    return vals[m, idx], grad, idx.astype(np.intp)


def ipm_loop(d, z, y, t, lam, tol: float, max_iter: int):
    """Mehrotra predictor-corrector iterations; same contract as the compiled kernel."""
    n, m, mt = len(z), len(y), len(t)
    H_mv, A_mv, AT_mv, G_mv, GT_mv = (M.dot for M in (d.H, d.A, d.AT, d.G, d.GT))
    Gdata = d.G.data
    perm = np.asarray(d.perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    N = n + m

    def ksolve(F, B, r):
        rp_ = r[perm]
        x = band_solve(F, rp_)
        rtol = 1e-14 * (1.0 + np.max(np.abs(rp_)))
        for _ in range(d.refine_steps):
            res = rp_ - band_matvec(B, x)
            if np.max(np.abs(res)) <= rtol:
                break
            x += band_solve(F, res)
        return x[inv]

    status, it, best, best_it = 1, 0, np.inf, 0
    saved = None
    trace = []
    while it < max_iter:
        it += 1
        rd = H_mv(z) + d.g - AT_mv(y) - GT_mv(lam)
        rp = A_mv(z) - d.b
        ri = G_mv(z) - t - d.h
        mu = float(t @ lam) / mt if mt else 0.0
        e_d = float(np.max(np.abs(rd), initial=0.0)) / d.scale_d
        e_p = max(float(np.max(np.abs(rp), initial=0.0)), float(np.max(np.abs(ri), initial=0.0))) / d.scale_p
        comp = float(np.max(t * lam, initial=0.0))
        err = max(e_d, e_p, comp)
        trace.append((e_d, e_p, comp))
        if err < best:
            best, best_it = err, it
            saved = (z.copy(), y.copy(), t.copy(), lam.copy())
        if err <= tol:
            status = 0
            break
        if best <= d.certify_tol and it - best_it >= d.stall_iters:
            break
        W = lam / t
        B = band_scatter(d.base, d.pos, d.prow, d.pa, d.pb, Gdata, W).reshape(N, d.k + 1)
        try:
            F = band_factor(B, d.signs, d.reg)
        except np.linalg.LinAlgError:
            status = 2
            break

        def direction(rc):
            sol = ksolve(F, B, np.concatenate([-rd - GT_mv(W * ri + rc / t), -rp]))
            dz = sol[:n]
            dt = G_mv(dz) + ri
            return dz, -sol[n:], dt, -(rc + lam * dt) / t

        if mt == 0:
            dz, dy, _, _ = direction(np.zeros(0))
            z += dz
            y += dy
            continue
        dz, dy, dt, dl = direction(t * lam)
        a_aff = min(1.0, max_step(t, dt), max_step(lam, dl))
        mu_aff = float((t + a_aff * dt) @ (lam + a_aff * dl)) / mt
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dz, dy, dt, dl = direction(t * lam + dt * dl - sigma * mu)
        if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(dl))):
            status = 2
            break
        alpha = min(1.0, d.step_fraction * min(max_step(t, dt), max_step(lam, dl)))
        z += alpha * dz
        y += alpha * dy
        t += alpha * dt
        lam += alpha * dl
        np.maximum(t, 1e-30, out=t)
        np.maximum(lam, 1e-30, out=lam)
    if status != 0 and saved is not None:
        for dst, src in zip((z, y, t, lam), saved):
            dst[:] = src
        if best <= d.certify_tol:
            status = 0
    return status, it, np.array(trace).reshape(-1, 3)
