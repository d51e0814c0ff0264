# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: unpivoted banded LDL^T and batched corridor SDF."""
import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite, fabs, INFINITY

cnp.import_array()


cdef class BandFactor:
    cdef public object L
    cdef public Py_ssize_t k
    cdef public object first

    def __init__(self, L, Py_ssize_t k, first=None):
        self.L = L
        self.k = k
        self.first = first


cdef Py_ssize_t[::1] _envelope(const double[:, ::1] B):
    # first structurally nonzero column of each row; LDL^T creates no fill left of it
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t k = B.shape[1] - 1
    cdef Py_ssize_t[::1] first = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t i, j, j0
    for i in range(n):
        j0 = i - k if i > k else 0
        first[i] = i
        for j in range(j0, i):
            if B[i, k + j - i] != 0.0:
                first[i] = j
                break
    return first


cdef Py_ssize_t _ldl(double[:, ::1] L, const Py_ssize_t[::1] first, double[::1] tmp, const double[::1] sg,
                     bint dyn, double dyn_eps, double dyn_delta) noexcept nogil:
    # in-place envelope LDL^T; returns -1 on success, else the failing row
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t k = L.shape[1] - 1
    cdef Py_ssize_t i, j, p, j0, p0
    cdef double s
    for i in range(n):
        j0 = first[i]
        for j in range(j0, i + 1):
            s = L[i, k + j - i]
            p0 = first[j] if first[j] > j0 else j0
            for p in range(p0, j):
                s -= tmp[p - j0] * L[j, k + p - j]
            if j < i:
                tmp[j - j0] = s  # L[i, j] * d_j
                L[i, k + j - i] = s / L[j, k]
            else:
                if dyn and isfinite(s) and s * sg[i] < dyn_eps:
                    s = sg[i] * dyn_delta
                if s == 0.0 or not isfinite(s):
                    return i
                L[i, k] = s
    return -1


cdef void _ldl_solve(const double[:, ::1] L, const Py_ssize_t[::1] first, double[::1] x) noexcept nogil:
    cdef Py_ssize_t k = L.shape[1] - 1
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t i, p
    cdef double s, xi
    for i in range(n):
        s = x[i]
        for p in range(first[i], i):
            s -= L[i, k + p - i] * x[p]
        x[i] = s
    for i in range(n):
        x[i] /= L[i, k]
    # backward sweep by columns of L^T, i.e. rows of L scattered upward
    for i in range(n - 1, -1, -1):
        xi = x[i]
        for p in range(first[i], i):
            x[p] -= L[i, k + p - i] * xi


cdef void _band_mv(const double[:, ::1] B, const Py_ssize_t[::1] first, const double[::1] x,
                   double[::1] y) noexcept nogil:
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t k = B.shape[1] - 1
    cdef Py_ssize_t i, j
    cdef double v, acc, xi
    for i in range(n):
        y[i] = 0.0
    for i in range(n):
        xi = x[i]
        acc = B[i, k] * xi
        for j in range(first[i], i):
            v = B[i, k + j - i]
            acc += v * x[j]
            y[j] += v * xi
        y[i] += acc


cdef void _csr_mv(const int[::1] indptr, const int[::1] indices, const double[::1] data, const double[::1] x,
                  double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, p
    cdef double acc
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc


cdef double _max_step(const double[::1] v, const double[::1] dv) noexcept nogil:
    cdef Py_ssize_t i
    cdef double a = 1e300, r
    for i in range(v.shape[0]):
        if dv[i] < 0.0:
            r = -v[i] / dv[i]
            if r < a:
                a = r
    return a


def band_factor(const double[:, ::1] B, signs=None, diag=None, double dyn_eps=1e-13, double dyn_delta=1e-7):
    """LDL^T of a symmetric quasi-definite matrix in row-band storage.

    ``B[i, k + j - i] = K[i, j]`` for ``i - k <= j <= i``. Works on a copy;
    the returned factor keeps unit-lower L off the diagonal and D on it.
    With ``signs`` (expected pivot signs, +1/-1) a pivot whose signed value falls
    below ``dyn_eps`` is replaced by ``sign * dyn_delta``. ``diag`` is added to
    the diagonal of the copy (static regularization).
    """
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t k = B.shape[1] - 1
    Lnp = np.array(B, copy=True)
    cdef double[:, ::1] L = Lnp
    cdef Py_ssize_t[::1] first = _envelope(B)
    cdef double[::1] tmp = np.empty(k + 1)
    cdef Py_ssize_t i, bad
    cdef bint dyn = signs is not None
    cdef double[::1] sg = np.ascontiguousarray(signs, dtype=np.float64) if dyn else np.ones(1)
    cdef double[::1] dg
    if diag is not None:
        dg = np.ascontiguousarray(diag, dtype=np.float64)
        for i in range(n):
            L[i, k] += dg[i]
    bad = _ldl(L, first, tmp, sg, dyn, dyn_eps, dyn_delta)
    if bad >= 0:
        raise ZeroDivisionError(f"zero or non-finite pivot at row {bad}")
    return BandFactor(Lnp, k, np.asarray(first))


def band_solve(BandFactor f, rhs):
    xnp = np.array(rhs, dtype=np.float64, copy=True)
    _ldl_solve(f.L, f.first, xnp)
    return xnp


def band_matvec(const double[:, ::1] B, const double[::1] x, first=None):
    """``K @ x`` for the symmetric matrix in row-band storage; ``first`` optionally
    gives each row's first nonzero column."""
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t k = B.shape[1] - 1
    cdef Py_ssize_t i
    cdef Py_ssize_t[::1] fr
    if first is None:
        fr = np.empty(n, dtype=np.intp)
        for i in range(n):
            fr[i] = i - k if i > k else 0
    else:
        fr = first
    ynp = np.empty(n)
    _band_mv(B, fr, x, ynp)
    return ynp


def band_scatter(const double[::1] base, const Py_ssize_t[::1] pos, const Py_ssize_t[::1] row,
                 const Py_ssize_t[::1] ia, const Py_ssize_t[::1] ib, const double[::1] data,
                 const double[::1] w):
    """``base`` plus ``w[row] * data[ia] * data[ib]`` accumulated at flat positions ``pos``."""
    out_np = np.array(base, copy=True)
    cdef double[::1] out = out_np
    cdef Py_ssize_t p
    for p in range(pos.shape[0]):
        out[pos[p]] += w[row[p]] * data[ia[p]] * data[ib[p]]
    return out_np


def csr_matvec(const int[::1] indptr, const int[::1] indices, const double[::1] data, const double[::1] x):
    ynp = np.empty(indptr.shape[0] - 1)
    _csr_mv(indptr, indices, data, x, ynp)
    return ynp


def max_step(const double[::1] v, const double[::1] dv):
    """Largest ``alpha`` in (0, 1e300] keeping ``v + alpha dv >= 0`` for positive ``v``."""
    return _max_step(v, dv)


def path_sdf(const double[:, ::1] pts, const double[:, ::1] a, const double[:, ::1] b, const double[::1] w):
    cdef Py_ssize_t m = pts.shape[0]
    cdef Py_ssize_t S = a.shape[0]
    vals_np = np.empty(m)
    grad_np = np.empty((m, 2))
    idx_np = np.empty(m, dtype=np.intp)
    cdef double[::1] vals = vals_np
    cdef double[:, ::1] grad = grad_np
    cdef Py_ssize_t[::1] idx = idx_np
    cdef Py_ssize_t r, i, best
    cdef double dx, dy, px, py, dd, h, rx, ry, w2, v, bv, brx, bry, bw2
    for r in range(m):
        best = -1
        bv = 0.0
        brx = 0.0
        bry = 0.0
        bw2 = 1.0
        for i in range(S):
            dx = b[i, 0] - a[i, 0]
            dy = b[i, 1] - a[i, 1]
            px = pts[r, 0] - a[i, 0]
            py = pts[r, 1] - a[i, 1]
            dd = dx * dx + dy * dy
            h = (px * dx + py * dy) / dd
            if h > 1.0:
                h = 1.0
            if h < 0.0:
                h = 0.0
            rx = px - h * dx
            ry = py - h * dy
            w2 = w[i] * w[i]
            v = (w2 - (rx * rx + ry * ry)) / w2
            if best < 0 or v >= bv:
                best = i
                bv = v
                brx = rx
                bry = ry
                bw2 = w2
        vals[r] = bv
        idx[r] = best
        grad[r, 0] = -2.0 * brx / bw2
        grad[r, 1] = -2.0 * bry / bw2
    return vals_np, grad_np, idx_np


cdef class _Ipm:
    """Buffers and data of one interior-point solve (see ``ipm_loop``)."""
    cdef int[::1] Hp, Hi, Ap, Ai, ATp, ATi, Gp, Gi, GTp, GTi
    cdef double[::1] Hv, Av, ATv, Gv, GTv, g, b, h, base, sg, reg, Gdata
    cdef Py_ssize_t[::1] pos, prow, pa, pb, perm, first
    cdef Py_ssize_t n, m, mt, N, k, refine
    cdef double[:, ::1] B, L
    cdef double[::1] z, y, t, lam, W, rd, rp, ri, tmp, wv, vn, r, x, rhs, res
    cdef bint failed

    cdef void assemble(self) noexcept nogil:
        cdef double* flat = &self.B[0, 0]
        cdef Py_ssize_t p, q
        for p in range(self.N * (self.k + 1)):
            flat[p] = self.base[p]
        for p in range(self.pos.shape[0]):
            flat[self.pos[p]] += self.W[self.prow[p]] * self.Gdata[self.pa[p]] * self.Gdata[self.pb[p]]
        for p in range(self.N):
            for q in range(self.k + 1):
                self.L[p, q] = self.B[p, q]
            self.L[p, self.k] += self.reg[p]

    cdef void direction(self, const double[::1] rc, double[::1] dz, double[::1] dy, double[::1] dt,
                        double[::1] dl) noexcept nogil:
        cdef Py_ssize_t i, it
        cdef Py_ssize_t n = self.n, N = self.N
        cdef double tol, e
        for i in range(self.mt):
            self.wv[i] = self.W[i] * self.ri[i] + rc[i] / self.t[i]
        _csr_mv(self.GTp, self.GTi, self.GTv, self.wv, self.vn)
        for i in range(n):
            self.r[i] = -self.rd[i] - self.vn[i]
        for i in range(self.m):
            self.r[n + i] = -self.rp[i]
        tol = 0.0
        for i in range(N):
            self.rhs[i] = self.r[self.perm[i]]
            self.x[i] = self.rhs[i]
            if fabs(self.rhs[i]) > tol:
                tol = fabs(self.rhs[i])
        tol = 1e-14 * (1.0 + tol)
        _ldl_solve(self.L, self.first, self.x)
        for it in range(self.refine):
            _band_mv(self.B, self.first, self.x, self.res)
            e = 0.0
            for i in range(N):
                self.res[i] = self.rhs[i] - self.res[i]
                if fabs(self.res[i]) > e:
                    e = fabs(self.res[i])
            if e <= tol:
                break
            _ldl_solve(self.L, self.first, self.res)
            for i in range(N):
                self.x[i] += self.res[i]
        for i in range(N):
            self.r[self.perm[i]] = self.x[i]
        self.failed = False
        for i in range(n):
            dz[i] = self.r[i]
            if not isfinite(dz[i]):
                self.failed = True
        for i in range(self.m):
            dy[i] = -self.r[n + i]
        _csr_mv(self.Gp, self.Gi, self.Gv, dz, dt)
        for i in range(self.mt):
            dt[i] += self.ri[i]
            dl[i] = -(rc[i] + self.lam[i] * dt[i]) / self.t[i]
            if not isfinite(dl[i]):
                self.failed = True


def _i32(a):
    return np.ascontiguousarray(a, dtype=np.int32)


def _f64(a):
    return np.array(a, dtype=np.float64, copy=True)


def ipm_loop(d, z, y, t, lam, double tol, int max_iter):
    """Mehrotra predictor-corrector iterations on the data bundle ``d``.

    ``z, y, t, lam`` (float64, contiguous) hold the start point and are
    overwritten with the returned iterate. Returns ``(status, iterations,
    trace)`` with status 0 optimal, 1 iteration limit, 2 numerical failure,
    and one ``(e_dual, e_primal, max t*lam)`` row of ``trace`` per iteration.
    When the run ends without reaching ``tol`` the best iterate seen is
    restored; it counts as optimal if its error is below ``d.certify_tol``.
    """
    cdef _Ipm s = _Ipm()
    s.Hp, s.Hi, s.Hv = _i32(d.H.indptr), _i32(d.H.indices), _f64(d.H.data)
    s.Ap, s.Ai, s.Av = _i32(d.A.indptr), _i32(d.A.indices), _f64(d.A.data)
    s.ATp, s.ATi, s.ATv = _i32(d.AT.indptr), _i32(d.AT.indices), _f64(d.AT.data)
    s.Gp, s.Gi, s.Gv = _i32(d.G.indptr), _i32(d.G.indices), _f64(d.G.data)
    s.GTp, s.GTi, s.GTv = _i32(d.GT.indptr), _i32(d.GT.indices), _f64(d.GT.data)
    s.Gdata = s.Gv
    s.g, s.b, s.h = _f64(d.g), _f64(d.b), _f64(d.h)
    s.base, s.sg, s.reg = _f64(d.base), _f64(d.signs), _f64(d.reg)
    s.pos = np.ascontiguousarray(d.pos, dtype=np.intp)
    s.prow = np.ascontiguousarray(d.prow, dtype=np.intp)
    s.pa = np.ascontiguousarray(d.pa, dtype=np.intp)
    s.pb = np.ascontiguousarray(d.pb, dtype=np.intp)
    s.perm = np.ascontiguousarray(d.perm, dtype=np.intp)
    s.first = np.ascontiguousarray(d.first, dtype=np.intp)
    s.refine = d.refine_steps
    cdef Py_ssize_t n = len(z), m = len(y), mt = len(t), N = n + m, k = d.k
    s.n, s.m, s.mt, s.N, s.k = n, m, mt, N, k
    s.B = np.empty((N, k + 1))
    s.L = np.empty((N, k + 1))
    s.z, s.y, s.t, s.lam = z, y, t, lam
    s.W, s.ri, s.wv = np.empty(mt), np.empty(mt), np.empty(mt)
    s.rd, s.vn = np.empty(n), np.empty(n)
    s.rp = np.empty(m)
    s.tmp = np.empty(k + 1)
    s.r, s.x, s.rhs, s.res = np.empty(N), np.empty(N), np.empty(N), np.empty(N)
    cdef double[::1] dz = np.empty(n), dy = np.empty(m), dt = np.empty(mt), dl = np.empty(mt)
    cdef double[::1] rc = np.empty(mt), vm = np.empty(max(mt, m)), vn2 = np.empty(n)
    cdef double[::1] bz = np.array(z), by = np.array(y), bt = np.array(t), bl = np.array(lam)
    trace_np = np.zeros((max_iter, 3))
    cdef double[:, ::1] trace = trace_np
    cdef double scale_d = d.scale_d, scale_p = d.scale_p, certify = d.certify_tol, frac = d.step_fraction
    cdef int stall = d.stall_iters
    cdef int status = 1, it = 0, best_it = 0
    cdef double best = INFINITY, e_d, e_p, comp, err, mu, a_aff, mu_aff, sigma, alpha, a1, a2
    cdef Py_ssize_t i
    with nogil:
        while it < max_iter:
            it += 1
            # residuals
            _csr_mv(s.Hp, s.Hi, s.Hv, s.z, s.rd)
            _csr_mv(s.ATp, s.ATi, s.ATv, s.y, vn2)
            for i in range(n):
                s.rd[i] += s.g[i] - vn2[i]
            _csr_mv(s.GTp, s.GTi, s.GTv, s.lam, vn2)
            e_d = 0.0
            for i in range(n):
                s.rd[i] -= vn2[i]
                if fabs(s.rd[i]) > e_d:
                    e_d = fabs(s.rd[i])
            _csr_mv(s.Ap, s.Ai, s.Av, s.z, s.rp)
            e_p = 0.0
            for i in range(m):
                s.rp[i] -= s.b[i]
                if fabs(s.rp[i]) > e_p:
                    e_p = fabs(s.rp[i])
            _csr_mv(s.Gp, s.Gi, s.Gv, s.z, s.ri)
            mu = 0.0
            comp = 0.0
            for i in range(mt):
                s.ri[i] -= s.t[i] + s.h[i]
                if fabs(s.ri[i]) > e_p:
                    e_p = fabs(s.ri[i])
                mu += s.t[i] * s.lam[i]
                if s.t[i] * s.lam[i] > comp:
                    comp = s.t[i] * s.lam[i]
            if mt:
                mu /= mt
            e_d /= scale_d
            e_p /= scale_p
            trace[it - 1, 0] = e_d
            trace[it - 1, 1] = e_p
            trace[it - 1, 2] = comp
            err = e_d if e_d > e_p else e_p
            if comp > err:
                err = comp
            if err < best:
                best = err
                best_it = it
                bz[:] = s.z
                by[:] = s.y
                bt[:] = s.t
                bl[:] = s.lam
            if err <= tol:
                status = 0
                break
            # stagnation once certified
            if best <= certify and it - best_it >= stall:
                break
            for i in range(mt):
                s.W[i] = s.lam[i] / s.t[i]
            s.assemble()
            if _ldl(s.L, s.first, s.tmp, s.sg, True, 1e-13, 1e-7) >= 0:
                status = 2
                break
            if mt == 0:
                s.direction(rc, dz, dy, dt, dl)
                if s.failed:
                    status = 2
                    break
                for i in range(n):
                    s.z[i] += dz[i]
                for i in range(m):
                    s.y[i] += dy[i]
                continue
            # predictor
            for i in range(mt):
                rc[i] = s.t[i] * s.lam[i]
            s.direction(rc, dz, dy, dt, dl)
            a1 = _max_step(s.t, dt)
            a2 = _max_step(s.lam, dl)
            a_aff = a1 if a1 < a2 else a2
            if a_aff > 1.0:
                a_aff = 1.0
            mu_aff = 0.0
            for i in range(mt):
                mu_aff += (s.t[i] + a_aff * dt[i]) * (s.lam[i] + a_aff * dl[i])
            mu_aff /= mt
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            for i in range(mt):
                rc[i] = s.t[i] * s.lam[i] + dt[i] * dl[i] - sigma * mu
            s.direction(rc, dz, dy, dt, dl)
            if s.failed:
                status = 2
                break
            a1 = _max_step(s.t, dt)
            a2 = _max_step(s.lam, dl)
            alpha = frac * (a1 if a1 < a2 else a2)
            if alpha > 1.0:
                alpha = 1.0
            for i in range(n):
                s.z[i] += alpha * dz[i]
            for i in range(m):
                s.y[i] += alpha * dy[i]
            for i in range(mt):
                s.t[i] += alpha * dt[i]
                s.lam[i] += alpha * dl[i]
                if s.t[i] < 1e-30:
                    s.t[i] = 1e-30
                if s.lam[i] < 1e-30:
                    s.lam[i] = 1e-30
        if status != 0 and best_it > 0:
            s.z[:] = bz
            s.y[:] = by
            s.t[:] = bt
            s.lam[:] = bl
            if best <= certify:
                status = 0
    return status, it, trace_np[:it]
