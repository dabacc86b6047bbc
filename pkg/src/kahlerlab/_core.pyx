# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the one-dimensional Kähler-Ricci flow.

Mirrors :mod:`kahlerlab._kernels_py` function for function.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()

DEF OK = 0
DEF NEWTON_FAILED = 1
DEF LOST_CONVEXITY = 2


cdef void _thomas(double[::1] lo, double[::1] di, double[::1] up, double[::1] rhs,
                  double[::1] cp, double[::1] x) noexcept nogil:
    """Solve a tridiagonal system; ``lo[i]`` couples row i to x[i-1]."""
    cdef Py_ssize_t n = di.shape[0], i
    cdef double denom
    cp[0] = up[0] / di[0]
    x[0] = rhs[0] / di[0]
    for i in range(1, n):
        denom = di[i] - lo[i] * cp[i - 1]
        cp[i] = up[i] / denom
        x[i] = (rhs[i] - lo[i] * x[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]


def thomas(lower, diag, upper, rhs):
    cdef double[::1] lo = np.ascontiguousarray(lower, dtype=float)
    cdef double[::1] di = np.ascontiguousarray(diag, dtype=float)
    cdef double[::1] up = np.ascontiguousarray(upper, dtype=float)
    cdef double[::1] r = np.ascontiguousarray(rhs, dtype=float)
    n = di.shape[0]
    out = np.empty(n)
    cdef double[::1] x = out
    cdef double[::1] cp = np.empty(n)
    _thomas(lo, di, up, r, cp, x)
    return out


cdef int _normalization(double[::1] w, double[::1] r, double[::1] qr, double dy,
                        double* c) noexcept nogil:
    cdef Py_ssize_t m = w.shape[0], j
    cdef double q, fj, sq = 0.0, se = 0.0, m0 = r[1] + w[1]
    for j in range(1, m - 1):
        fj = r[j] + w[j]
        if fj < m0:
            m0 = fj
    for j in range(1, m - 1):
        q = qr[j - 1] + (w[j - 1] - 2.0 * w[j] + w[j + 1]) / (dy * dy)
        if q <= 0.0:
            return LOST_CONVEXITY
        sq += q
        se += exp(-(r[j] + w[j] - m0))
    c[0] = log(sq) - (log(se) - m0)
    return OK


cdef int _monitors(double[::1] w, double[::1] r, double[::1] qr, double dy, double C1,
                   double[::1] h, double* out) noexcept nogil:
    cdef Py_ssize_t m = w.shape[0], j, n = m - 2
    cdef double c, q, H = 0.0, sup = 0.0, sq = 0.0, V, hy, grad = 0.0, var = 0.0
    if _normalization(w, r, qr, dy, &c) != OK:
        return LOST_CONVEXITY
    for j in range(n):
        q = qr[j] + (w[j] - 2.0 * w[j + 1] + w[j + 2]) / (dy * dy)
        h[j] = c - (r[j + 1] + w[j + 1]) - log(q)
        H += h[j] * exp(h[j]) * q
        sq += q
        if fabs(h[j]) > sup:
            sup = fabs(h[j])
    H *= C1 * dy
    V = C1 * dy * sq
    for j in range(n - 1):
        hy = (h[j + 1] - h[j]) / dy
        grad += hy * hy * exp(0.5 * (h[j] + h[j + 1]))
    for j in range(n):
        q = qr[j] + (w[j] - 2.0 * w[j + 1] + w[j + 2]) / (dy * dy)
        var += (h[j] - H / V) * (h[j] - H / V) * exp(h[j]) * q
    out[0] = H
    out[1] = sup
    out[2] = c
    out[3] = -C1 * dy * (grad - var)
    return OK


def monitors(w, r, qr, double dy, double C1):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=float)
    cdef double[::1] rv = np.ascontiguousarray(r, dtype=float)
    cdef double[::1] qv = np.ascontiguousarray(qr, dtype=float)
    cdef double[::1] h = np.empty(wv.shape[0] - 2)
    cdef double out[4]
    if _monitors(wv, rv, qv, dy, C1, h, out) != OK:
        raise ValueError("f is not convex")
    return out[0], out[1], out[2], out[3]


cdef int _step(double[::1] w, double[::1] W, double[::1] r, double[::1] qr, double s0,
               double s1, double dy, double dt, double tol, int maxiter, double[::1] lo,
               double[::1] di, double[::1] up, double[::1] G, double[::1] cp,
               double[::1] dx) noexcept nogil:
    cdef Py_ssize_t m = w.shape[0], n = m - 2, j, it
    cdef double c, q, a, dmax, scale = 0.0
    cdef double inv_dy2 = 1.0 / (dy * dy)
    if _normalization(w, r, qr, dy, &c) != OK:
        return LOST_CONVEXITY
    for j in range(m):
        W[j] = w[j]
        if fabs(w[j]) > scale:
            scale = fabs(w[j])
    scale += 1.0
    for it in range(maxiter):
        for j in range(n):
            q = qr[j] + (W[j] - 2.0 * W[j + 1] + W[j + 2]) * inv_dy2
            if q <= 0.0:
                return LOST_CONVEXITY
            G[j] = W[j + 1] - dt * log(q) - (w[j + 1] + dt * (r[j + 1] + w[j + 1] - c))
            a = dt * inv_dy2 / q
            lo[j] = -a
            up[j] = -a
            di[j] = 1.0 + 2.0 * a
        di[0] += lo[0]
        di[n - 1] += up[n - 1]
        _thomas(lo, di, up, G, cp, dx)
        dmax = 0.0
        for j in range(n):
            W[j + 1] -= dx[j]
            if fabs(dx[j]) > dmax:
                dmax = fabs(dx[j])
        W[0] = W[1] - s0
        W[m - 1] = W[m - 2] + s1
        if dmax < tol * scale:
            return OK
    return NEWTON_FAILED


def krf_step(w, r, qr, double s0, double s1, double dy, double dt, double tol=1e-13,
             int maxiter=30):
    w = np.array(w, dtype=float)
    n = w.shape[0] - 2
    W = np.empty_like(w)
    status = _step(w, W, np.ascontiguousarray(r, dtype=float),
                   np.ascontiguousarray(qr, dtype=float), s0, s1, dy, dt, tol, maxiter,
                   np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n),
                   np.empty(n))
    return (W, status) if status == OK else (w, status)


def krf_advance(w, r, qr, double s0, double s1, double dy, double dt, int nsteps,
                double C1, double tol=1e-13, int maxiter=30):
    cur_arr = np.array(w, dtype=float)
    nxt_arr = np.empty_like(cur_arr)
    r_arr = np.array(r, dtype=float)
    cdef double[::1] cur = cur_arr
    cdef double[::1] nxt = nxt_arr
    cdef double[::1] tmp
    cdef double[::1] rv = r_arr
    cdef double[::1] qv = np.ascontiguousarray(qr, dtype=float)
    cdef Py_ssize_t m = cur.shape[0], n = m - 2, j
    cdef double[::1] lo = np.empty(n), di = np.empty(n), up = np.empty(n)
    cdef double[::1] G = np.empty(n), cp = np.empty(n), dx = np.empty(n)
    cdef double[::1] h = np.empty(n)
    trace_arr = np.empty((nsteps, 4))
    cdef double[:, ::1] trace = trace_arr
    cdef double out[4]
    cdef double g, shift = 0.0
    cdef int k, status = OK
    with nogil:
        for k in range(nsteps):
            status = _step(cur, nxt, rv, qv, s0, s1, dy, dt, tol, maxiter, lo, di, up, G,
                           cp, dx)
            if status != OK:
                break
            # move the uniform part of w into r
            g = 0.5 * (nxt[0] + nxt[m - 1])
            for j in range(m):
                nxt[j] -= g
                rv[j] += g
            shift += g
            tmp = cur
            cur = nxt
            nxt = tmp
            _monitors(cur, rv, qv, dy, C1, h, out)
            trace[k, 0] = out[0]
            trace[k, 1] = out[1]
            trace[k, 2] = out[2]
            trace[k, 3] = out[3]
    done = nsteps if status == OK else k
    return np.asarray(cur).copy(), done, status, trace_arr[:done], shift
