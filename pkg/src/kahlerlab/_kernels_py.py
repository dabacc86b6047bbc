"""Pure-Python (NumPy/SciPy) kernels for the one-dimensional Kähler-Ricci flow.

The potential is stored as ``f = r + w`` on ``m`` uniform nodes, where ``r``
is a fixed smooth reference whose interior second differences ``qr`` are
supplied exactly. Working with the small remainder ``w`` keeps ``f''``
accurate in the tails, where ``f`` is nearly linear. The end nodes are slaved
to their neighbours through the pinned differences ``s0 = w[1] - w[0]`` and
``s1 = w[-1] - w[-2]``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded

OK, NEWTON_FAILED, LOST_CONVEXITY = 0, 1, 2


def second_difference(f, dy):
    return (f[:-2] - 2.0 * f[1:-1] + f[2:]) / (dy * dy)


def _normalization(fi, q):
    m0 = float(np.min(fi))
    return math.log(float(np.sum(q))) - (math.log(float(np.sum(np.exp(-(fi - m0))))) - m0)


def monitors(w, r, qr, dy, C1):
    """``(H, sup|h|, c, dH/dt identity)`` on the interior nodes."""
    q = qr + second_difference(w, dy)
    if np.any(q <= 0):
        raise ValueError("f is not convex")
    fi = r[1:-1] + w[1:-1]
    c = _normalization(fi, q)
    h = c - fi - np.log(q)
    wgt = np.exp(h) * q
    H = C1 * dy * float(np.sum(h * wgt))
    V = C1 * dy * float(np.sum(q))
    hy = np.diff(h) / dy
    grad_term = dy * float(np.sum(hy * hy * np.exp(0.5 * (h[1:] + h[:-1]))))
    var_term = dy * float(np.sum((h - H / V) ** 2 * wgt))
    return H, float(np.max(np.abs(h))), c, -C1 * (grad_term - var_term)


def krf_step(w, r, qr, s0, s1, dy, dt, tol=1e-13, maxiter=30):
    """One step of ``f_t = log f'' + f - c``: ``log f''`` by backward Euler
    (Newton, tridiagonal Jacobian), ``f - c`` frozen at the old level.

    Returns ``(new_w, status)``; on failure the input is returned.
    """
    q = qr + second_difference(w, dy)
    if np.any(q <= 0):
        return w, LOST_CONVEXITY
    fi = r[1:-1] + w[1:-1]
    c = _normalization(fi, q)
    rhs = w[1:-1] + dt * (fi - c)
    W = np.array(w, dtype=float)
    n = q.size
    ab = np.empty((3, n))
    inv_dy2 = 1.0 / (dy * dy)
    scale = 1.0 + float(np.max(np.abs(w)))
    for _ in range(maxiter):
        Q = qr + second_difference(W, dy)
        if np.any(Q <= 0):
            return w, LOST_CONVEXITY
        G = W[1:-1] - dt * np.log(Q) - rhs
        a = dt * inv_dy2 / Q
        ab[0, 1:] = -a[:-1]
        ab[2, :-1] = -a[1:]
        ab[1] = 1.0 + 2.0 * a
        ab[1, 0] -= a[0]
        ab[1, -1] -= a[-1]
        dx = solve_banded((1, 1), ab, G)
        W[1:-1] -= dx
        W[0] = W[1] - s0
        W[-1] = W[-2] + s1
        if float(np.max(np.abs(dx))) < tol * scale:
            return W, OK
    return w, NEWTON_FAILED


def krf_advance(w, r, qr, s0, s1, dy, dt, nsteps, C1, tol=1e-13, maxiter=30):
    """Advance up to ``nsteps`` steps, recording monitors after each.

    After every step the mean of the two end values of ``w`` is moved into
    ``r`` (a uniform shift leaves all second differences unchanged), so ``w``
    stays small in the tails and its rounding does not pollute ``f''``.

    Returns ``(w, done, status, trace, shift)`` with ``trace`` of shape
    ``(done, 4)`` and ``shift`` the total constant moved into ``r``; on
    failure ``w`` is the last accepted state.
    """
    w = np.array(w, dtype=float)
    r = np.array(r, dtype=float)
    trace = np.empty((nsteps, 4))
    shift = 0.0
    for k in range(nsteps):
        nxt, status = krf_step(w, r, qr, s0, s1, dy, dt, tol, maxiter)
        if status != OK:
            return w, k, status, trace[:k], shift
        g = 0.5 * (nxt[0] + nxt[-1])
        w = nxt - g
        r += g
        shift += g
        trace[k] = monitors(w, r, qr, dy, C1)
    return w, nsteps, OK, trace, shift


def thomas(lower, diag, upper, rhs):
    """Tridiagonal solve; ``lower[i]`` couples row ``i`` to ``x[i-1]``."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:n - 1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)
