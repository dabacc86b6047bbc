"""Kähler-Ricci flow on CP^1 as the reduced gradient flow of the H-functional.

In logarithmic coordinates the flow ``dphi/dt = -h`` reads

    f_t = log f'' + f - c(t),

with ``c(t)`` recomputed each step so that ``int e^h omega = V`` on the grid.
The grid potential is stored as ``f = r + w`` with
``r = 2 log cosh(y/2) + A + B tanh(y/2)`` (the Kähler-Einstein potential plus
tail constants), which keeps ``f''`` accurate in the tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import _kernels
from .errors import InvalidArgument, StepRejected
from .terms import PolynomialTerm, ZeroTerm
from .metric import (ComplexPotential, SymplecticPotential, grad_pairing, legendre_dual,
                     ricci_gradient, ricci_potential)

TRACE_COLUMNS = ("t", "H", "sup_h", "c", "dH_dt_identity")
MAX_HALVINGS = 10


def reference_potential(y):
    """``r(y) = 2 log cosh(y/2)`` evaluated without overflow."""
    a = np.abs(y)
    return a + 2.0 * np.log1p(np.exp(-a)) - 2.0 * math.log(2.0)


def reference_second_difference(y, dy):
    """Exact centred second difference of :func:`reference_potential`.

    ``r(y+d) + r(y-d) - 2 r(y) = 2 log(1 + 2 sinh(d/2)^2 / (cosh y + 1))``.
    """
    e = np.exp(-np.abs(y))
    inv = 2.0 * e / (1.0 + e) ** 2  # 1 / (cosh y + 1)
    return 2.0 / dy**2 * np.log1p(2.0 * math.sinh(0.5 * dy) ** 2 * inv)


def tanh_second_difference(y, dy):
    """Exact centred second difference of ``tanh(y/2)``."""
    e = np.exp(-np.abs(y))
    ratio = 2.0 * e * (1.0 - e * e) / ((1.0 + e) ** 2 * (1.0 + 2.0 * e * math.cosh(dy) + e * e))
    return -4.0 * np.sign(y) * math.sinh(0.5 * dy) ** 2 * ratio / dy**2


def _psi_about_endpoints(psi, x, y):
    """``psi(x) - psi(+-1)`` expanded in the facet distance, plus the two
    endpoint values ``(psi(-1), psi(1))``.

    Near a facet the value of a polynomial is a small difference of O(1)
    terms; expanding about the endpoint keeps its relative accuracy there.
    Non-polynomial terms fall back to direct evaluation with zero endpoints.
    """
    if isinstance(psi, ZeroTerm):
        return np.zeros_like(x), (0.0, 0.0)
    if not isinstance(psi, PolynomialTerm):
        return psi.derivatives(x[:, None], 0)[0], (0.0, 0.0)
    p = npoly.Polynomial(psi.coeffs)
    right = p(npoly.Polynomial([1.0, -1.0])).coef
    left = p(npoly.Polynomial([-1.0, 1.0])).coef
    ls = np.where(y >= 0, 1.0 - x, 1.0 + x)
    vr = npoly.polyval(ls, np.r_[0.0, right[1:]])
    vl = npoly.polyval(ls, np.r_[0.0, left[1:]])
    return np.where(y >= 0, vr, vl), (float(left[0]), float(right[0]))


def _remainder(u, cp):
    """``f - 2 log cosh(y/2)`` without cancellation, split as
    ``(rest, (c_minus, c_plus))`` with the full remainder equal to
    ``rest - c_minus`` for ``y < 0`` and ``rest - c_plus`` otherwise.

    With ``x_r = tanh(y/2)`` (so ``u_ref'(x_r) = y``) the remainder is
    ``-B(x, x_r) - psi(x)``, where ``B`` is the Bregman divergence of
    ``u_ref``; both terms are stationary in ``x`` and free of ``O(L)`` sizes.
    """
    x, y = cp.x, cp.y
    # small facet value (the side y points to) and its reference value
    ls = np.where(y >= 0, 1.0 - x, 1.0 + x)
    lrs = 2.0 / (1.0 + np.exp(np.abs(y)))
    d = ls - lrs
    # the other facet values sum with these to 2
    breg = ls * np.log(ls / lrs) + (2.0 - ls) * np.log1p(-d / (2.0 - lrs))
    dpsi, ends = _psi_about_endpoints(u.psi, x, y)
    return -breg - dpsi, ends


@dataclass
class FlowState:
    """Grid state of the flow; ``trace`` rows follow :data:`TRACE_COLUMNS`."""

    model: object
    y: np.ndarray
    w: np.ndarray
    pins: tuple
    tails: tuple = (0.0, 0.0)
    t: float = 0.0
    c_of_t: float = float("nan")
    trace: list = field(default_factory=list)

    @property
    def dy(self):
        return float(self.y[1] - self.y[0])

    @property
    def C1(self):
        return self.model.C_n

    @property
    def r(self):
        """Reference part ``2 log cosh(y/2) + A + B tanh(y/2)`` of ``f``.

        ``A, B`` absorb the tail constants of ``f - 2 log cosh(y/2)`` so the
        stored remainder ``w`` is small where ``f''`` is tiny.
        """
        A, B = self.tails
        return reference_potential(self.y) + A + B * np.tanh(0.5 * self.y)

    @property
    def qr(self):
        yi = self.y[1:-1]
        return (reference_second_difference(yi, self.dy)
                + self.tails[1] * tanh_second_difference(yi, self.dy))

    @property
    def f(self):
        return self.r + self.w

    def second_difference(self):
        return self.qr + (self.w[:-2] - 2 * self.w[1:-1] + self.w[2:]) / self.dy**2

    def complex_potential(self):
        f = self.f
        slopes = ((f[1] - f[0]) / self.dy, (f[-1] - f[-2]) / self.dy)
        return ComplexPotential(self.model, self.y.copy(), f, slopes)

    def monitors(self):
        """``(H, sup|h|, c, dH/dt identity)`` at the current state."""
        return _kernels.monitors(self.w, self.r, self.qr, self.dy, self.C1)

    def H(self):
        return self.monitors()[0]

    @classmethod
    def from_potential(cls, u, L=12.0, m=4801):
        if u.model.n != 1:
            raise InvalidArgument("the flow is implemented for n = 1 only")
        cp = legendre_dual(u, L, m)
        rest, (cm, cp_) = _remainder(u, cp)
        # endpoint constants go into the tails; rest carries the variation
        A, B = -0.5 * (cp_ + cm), -0.5 * (cp_ - cm)
        sgn = np.where(cp.y >= 0, 1.0, -1.0)
        # w = rest + B (sign(y) - tanh(y/2)), the bracket formed stably
        gap = sgn * 2.0 / (1.0 + np.exp(np.abs(cp.y)))
        w = rest + B * gap
        state = cls(u.model, cp.y, np.zeros_like(w), (0.0, 0.0), (A, B))
        state.w = w
        state.pins = (float(w[1] - w[0]), float(w[-1] - w[-2]))
        if np.any(state.second_difference() <= 0):
            raise InvalidArgument("initial potential is not convex on the grid")
        mon = state.monitors()
        state.c_of_t = mon[2]
        state.trace = [(0.0,) + tuple(mon)]
        return state

    def trace_array(self):
        return np.array(self.trace, dtype=float).reshape(-1, len(TRACE_COLUMNS))


def _raw_step(state, dt):
    w, status = _kernels.krf_step(state.w, state.r, state.qr, state.pins[0], state.pins[1],
                                  state.dy, dt)
    return w, status


def krf_step(state, dt):
    """One semi-implicit step; returns a new state with the monitor row
    appended.

    Raises
    ------
    InvalidArgument
        If ``dt <= 0``.
    StepRejected
        If Newton fails or convexity is lost; ``suggested_dt`` is ``dt / 2``.
    """
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    w, status = _raw_step(state, dt)
    if status != _kernels.OK:
        why = "lost convexity" if status == _kernels.LOST_CONVEXITY else "Newton failed"
        raise StepRejected(f"flow step rejected ({why})", suggested_dt=dt / 2, state=state)
    new = replace(state, w=w, t=state.t + dt, trace=list(state.trace))
    mon = new.monitors()
    new.c_of_t = mon[2]
    new.trace.append((new.t,) + tuple(mon))
    return new


def _substeps(state, dt):
    """Cover ``dt`` with ``2^k`` equal substeps for the smallest working k."""
    for k in range(1, MAX_HALVINGS + 1):
        w, sub = state.w, dt / 2**k
        trial = replace(state)
        for _ in range(2**k):
            trial.w = w
            w, status = _raw_step(trial, sub)
            if status != _kernels.OK:
                break
        else:
            return w
    raise StepRejected(f"step at t={state.t:.6g} failed after {MAX_HALVINGS} halvings",
                       suggested_dt=dt / 2**MAX_HALVINGS, state=state)


def run_krf(initial, T, dt, L=12.0, m=4801):
    """Run the flow from a symplectic potential (or a :class:`FlowState`).

    ``T = 0`` returns the initial state. Steps that fail are retried with
    up to ten halvings of ``dt``; if that is not enough the partial state is
    attached to the raised :class:`StepRejected`.
    """
    if T < 0:
        raise InvalidArgument("T must be nonnegative")
    state = initial if isinstance(initial, FlowState) else FlowState.from_potential(initial, L, m)
    if T == 0:
        return state
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise InvalidArgument("T must be a positive multiple of dt")
    state = replace(state, trace=list(state.trace))
    r, qr = state.r, state.qr
    t0, done_total = state.t, 0
    while done_total < nsteps:
        w, done, status, tr, shift = _kernels.krf_advance(state.w, r, qr, state.pins[0],
                                                          state.pins[1], state.dy, dt,
                                                          nsteps - done_total, state.C1)
        state.tails = (state.tails[0] + shift, state.tails[1])
        r = state.r
        for k in range(done):
            state.trace.append((t0 + (done_total + k + 1) * dt,) + tuple(tr[k]))
        done_total += done
        state.w, state.t = w, t0 + done_total * dt
        if status != _kernels.OK:
            try:
                state.w = _substeps(state, dt)
            except StepRejected as exc:
                state.c_of_t = state.trace[-1][3]
                exc.state = state
                raise
            done_total += 1
            state.t = t0 + done_total * dt
            state.trace.append((state.t,) + tuple(state.monitors()))
    state.c_of_t = state.trace[-1][3]
    return state


def dH_dt_identity(obj):
    """``-int (|grad h|^2 - (h - H/V)^2) e^h omega^n``.

    For a :class:`FlowState` the grid form is used; for a symplectic potential
    the quadrature form with exact derivatives.
    """
    if isinstance(obj, FlowState):
        return obj.monitors()[3]
    if not isinstance(obj, SymplecticPotential):
        raise InvalidArgument("expected a FlowState or a SymplecticPotential")
    u = obj
    h = ricci_potential(u).h
    eh = np.exp(h)
    grad = ricci_gradient(u)
    Cn = u.model.C_n
    H = Cn * float(u.rule.integrate(h * eh))
    integrand = (grad_pairing(grad, grad, u) - (h - H / u.model.V) ** 2) * eh
    return -Cn * float(u.rule.integrate(integrand))


def fd_slope(trace, t):
    """Richardson-extrapolated central difference of ``H`` at time ``t``."""
    tr = np.asarray(trace, dtype=float)
    k = int(np.argmin(np.abs(tr[:, 0] - t)))
    if k < 2 or k + 2 >= len(tr):
        raise InvalidArgument("t is too close to the ends of the trace")
    H, dt = tr[:, 1], tr[k + 1, 0] - tr[k, 0]
    d1 = (H[k + 1] - H[k - 1]) / (2 * dt)
    d2 = (H[k + 2] - H[k - 2]) / (4 * dt)
    return (4 * d1 - d2) / 3
