# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled denoising score-matching kernel; mirrors ``_kernels_py.dsm_loss_grad``.

One fused pass per row: noise the point, encode, build and Cholesky-factor
the ``d x d`` head system, decode, accumulate loss and gradients. The factor
is reused for the adjoint solve. Inner loops run over contiguous memory.
"""
import numpy as np

from libc.math cimport exp, expm1, sqrt
from libc.stdlib cimport free, malloc


cdef inline int _chol(const double* M, double* Lc, double* inv_diag, int d) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = M[i * d + j]
            for k in range(j):
                s -= Lc[i * d + k] * Lc[j * d + k]
            if i == j:
                if s <= 0.0:
                    return -1
                Lc[i * d + i] = sqrt(s)
                inv_diag[i] = 1.0 / Lc[i * d + i]
            else:
                Lc[i * d + j] = s * inv_diag[j]
    return 0


cdef inline void _chol_solve(const double* Lc, const double* inv_diag, const double* r,
                             double* out, int d) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(d):
        s = r[i]
        for k in range(i):
            s -= Lc[i * d + k] * out[k]
        out[i] = s * inv_diag[i]
    for i in range(d - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, d):
            s -= Lc[k * d + i] * out[k]
        out[i] = s * inv_diag[i]


cdef int _run(Py_ssize_t n, int D, int d,
              const double* X, const double* Y, const double* T, const double* E,
              const double* V, const double* P, const double* b, double inv_nu2,
              bint want_grad, double* work,
              double* gV, double* S, double* gb, double* out) noexcept nogil:
    # work layout: xp[D] gsv[D] u[d] r[d] w[d] q[d] lam[d] inv_diag[d] M[d*d] Lc[d*d]
    cdef double* xp = work
    cdef double* gsv = xp + D
    cdef double* u = gsv + D
    cdef double* r = u + d
    cdef double* w = r + d
    cdef double* q = w + d
    cdef double* lam = q + d
    cdef double* inv_diag = lam + d
    cdef double* M = inv_diag + d
    cdef double* Lc = M + d * d
    cdef Py_ssize_t i
    cdef int j, k, l
    cdef const double* xi
    cdef const double* ei
    cdef const double* vj
    cdef double* gvj
    cdef double a, hh, sq, inv_h, inv_sq, kk, yi, s, e, gs, xj, lb, wb, c1
    cdef double loss = 0.0, g_inv = 0.0, scale = 2.0 / n
    for i in range(n):
        xi = X + i * D
        ei = E + i * D
        yi = Y[i]
        a = exp(-0.5 * T[i])
        hh = -expm1(-T[i])
        sq = sqrt(hh)
        inv_h = 1.0 / hh
        inv_sq = 1.0 / sq
        kk = hh * inv_nu2
        for k in range(d):
            u[k] = 0.0
        for j in range(D):
            xj = a * xi[j] + sq * ei[j]
            xp[j] = xj
            vj = V + j * d
            for k in range(d):
                u[k] += xj * vj[k]
        for k in range(d):
            r[k] = a * u[k] + kk * yi * b[k]
            c1 = kk * b[k]
            for l in range(d):
                M[k * d + l] = c1 * b[l] + hh * P[k * d + l]
            M[k * d + k] += a * a
        if _chol(M, Lc, inv_diag, d) != 0:
            return -1
        _chol_solve(Lc, inv_diag, r, w, d)
        for k in range(d):
            q[k] = 0.0
        for j in range(D):
            vj = V + j * d
            s = 0.0
            for k in range(d):
                s += vj[k] * w[k]
            e = (a * s - xp[j]) * inv_h + ei[j] * inv_sq
            loss += e * e
            if want_grad:
                gs = scale * e * inv_h
                gsv[j] = gs
                for k in range(d):
                    q[k] += gs * vj[k]
        if not want_grad:
            continue
        for k in range(d):
            q[k] *= a
        _chol_solve(Lc, inv_diag, q, lam, d)
        lb = 0.0
        wb = 0.0
        for k in range(d):
            lb += lam[k] * b[k]
            wb += w[k] * b[k]
        for j in range(D):
            gvj = gV + j * d
            gs = a * gsv[j]
            xj = a * xp[j]
            for k in range(d):
                gvj[k] += gs * w[k] + xj * lam[k]
        for k in range(d):
            gb[k] += kk * (yi - wb) * lam[k] - kk * lb * w[k]
            c1 = hh * lam[k]
            for l in range(d):
                S[k * d + l] += c1 * w[l]
        g_inv += hh * lb * (yi - wb)
    out[0] = loss / n
    out[1] = g_inv
    return 0


def dsm_loss_grad(X, Y, T, E, V, P, b, double inv_nu2, bint want_grad=True):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef int D = <int>Xv.shape[1]
    cdef int d = <int>Vv.shape[1]
    if n == 0:
        raise ValueError("empty batch")
    if Ev.shape[0] != n or Ev.shape[1] != D or Yv.shape[0] != n or Tv.shape[0] != n:
        raise ValueError("row counts disagree")
    if Vv.shape[0] != D or Pv.shape[0] != d or Pv.shape[1] != d or bv.shape[0] != d:
        raise ValueError("parameter shapes disagree")

    gV_arr = np.zeros((D, d))
    S_arr = np.zeros((d, d))
    gb_arr = np.zeros(d)
    out_arr = np.zeros(2)
    cdef double[:, ::1] gV = gV_arr
    cdef double[:, ::1] S = S_arr
    cdef double[::1] gb = gb_arr
    cdef double[::1] out = out_arr
    cdef double* work = <double*>malloc((2 * D + 6 * d + 2 * d * d) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    cdef int status
    try:
        with nogil:
            status = _run(n, D, d, &Xv[0, 0], &Yv[0], &Tv[0], &Ev[0, 0],
                          &Vv[0, 0], &Pv[0, 0], &bv[0], inv_nu2, want_grad, work,
                          &gV[0, 0], &S[0, 0], &gb[0], &out[0])
    finally:
        free(work)
    if status != 0:
        raise np.linalg.LinAlgError("per-row system is not positive definite")
    loss = float(out_arr[0])
    if not want_grad:
        return loss, None, None, None, None
    gP = -0.5 * (S_arr + S_arr.T)
    return loss, gV_arr, gP, gb_arr, float(out_arr[1])
