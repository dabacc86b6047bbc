"""Holomorphic invariants of the torus action.

For a torus vector ``xi`` the Hamiltonian in moment coordinates is
``theta_xi(x) = <xi, x> + c_xi`` with ``c_xi`` fixed by
``int_P e^{theta_xi} dx = vol(P)``. All invariants here are integrals over the
polytope against ``e^h dx`` or ``dx`` and do not depend on the invariant
metric used to compute ``h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, InvalidArgument
from .metric import SymplecticPotential, grad_pairing, ricci_gradient, ricci_potential


@dataclass(frozen=True)
class TorusVector:
    components: tuple

    def __init__(self, components):
        comps = tuple(float(c) for c in np.atleast_1d(np.asarray(components, dtype=float)))
        object.__setattr__(self, "components", comps)

    @property
    def array(self):
        return np.array(self.components)

    @property
    def dim(self):
        return len(self.components)

    def normalization(self, rule, P):
        """``c_xi = log vol(P) - log int_P e^{<xi,x>} dx``."""
        e = rule.nodes @ self.array
        m = float(np.max(e))
        return math.log(P.volume) - (m + math.log(float(rule.integrate(np.exp(e - m)))))

    def hamiltonian(self, rule, P, shift=0.0):
        """``theta_xi`` at the nodes of ``rule``."""
        return rule.nodes @ self.array + self.normalization(rule, P) + shift


def as_vector(xi, dim):
    if isinstance(xi, TorusVector):
        v = xi
    else:
        v = TorusVector(xi)
    if v.dim != dim:
        raise InvalidArgument(f"torus vector has dimension {v.dim}, model has {dim}")
    return v


def h_invariant(u, xi):
    """``H(xi) = int theta_xi e^h omega^n``."""
    xi = as_vector(xi, u.model.n)
    h = ricci_potential(u).h
    theta = xi.hamiltonian(u.rule, u.P)
    return u.model.C_n * float(u.rule.integrate(theta * np.exp(h)))


def futaki(u, xi, shift=0.0):
    """Futaki invariant by two routes: ``(F_measure, F_gradient)``.

    ``F_measure = int theta (e^h - 1) omega^n`` and
    ``F_gradient = int <grad theta, grad h> omega^n``. ``shift`` is added to
    ``theta`` in the measure form, which must not change it.
    """
    xi = as_vector(xi, u.model.n)
    h = ricci_potential(u).h
    theta = xi.hamiltonian(u.rule, u.P, shift)
    Cn = u.model.C_n
    f_measure = Cn * float(u.rule.integrate(theta * (np.exp(h) - 1.0)))
    dtheta = np.broadcast_to(xi.array, u.rule.nodes.shape)
    pairing = grad_pairing(dtheta, ricci_gradient(u), u)
    f_gradient = Cn * float(u.rule.integrate(pairing))
    return f_measure, f_gradient


def modified_futaki(u, xi, X):
    """``F_X(xi) = int theta_xi (e^h - e^{theta_X}) omega^n``."""
    xi = as_vector(xi, u.model.n)
    X = as_vector(X, u.model.n)
    h = ricci_potential(u).h
    theta = xi.hamiltonian(u.rule, u.P)
    theta_X = X.hamiltonian(u.rule, u.P)
    return u.model.C_n * float(u.rule.integrate(theta * (np.exp(h) - np.exp(theta_X))))


def modified_futaki_relation(u, xi, X):
    """Right side of ``F_X(xi) = F(xi) - int theta_xi (e^{theta_X} - 1) omega^n``."""
    xi = as_vector(xi, u.model.n)
    X = as_vector(X, u.model.n)
    theta = xi.hamiltonian(u.rule, u.P)
    theta_X = X.hamiltonian(u.rule, u.P)
    extra = u.model.C_n * float(u.rule.integrate(theta * (np.exp(theta_X) - 1.0)))
    return futaki(u, xi)[0] - extra


def beta_vector(model, metric=None, check_metric=None):
    """First moment of ``e^h dx`` divided by ``vol(P)``.

    Returns ``(beta, delta)`` where ``delta`` is the sup-difference to the same
    quantity computed with ``check_metric`` (a fixed perturbed metric when not
    given).
    """
    from .terms import make_psi

    u = SymplecticPotential(model) if metric is None else metric
    if check_metric is None:
        coeffs = [0.05, 0.02] if model.n == 1 else [[0.05, 0.02], [-0.03, 0.0]]
        check_metric = SymplecticPotential(model, make_psi(model.polytope, "bump", coeffs))

    def moment(w):
        h = ricci_potential(w).h
        return w.rule.integrate(np.exp(h)[:, None] * w.rule.nodes) / model.vol

    beta = moment(u)
    delta = float(np.max(np.abs(beta - moment(check_metric))))
    return beta, delta


def _weighted_moments(rule, xi):
    x = rule.nodes
    e = x @ xi
    w = np.exp(e - np.max(e))
    z = float(rule.integrate(w))
    mean = rule.integrate(w[:, None] * x) / z
    d = x - mean
    cov = rule.integrate(w[:, None, None] * d[:, :, None] * d[:, None, :]) / z
    return mean, cov


@dataclass
class ExtremalField:
    xi0: TorusVector
    optimizer_route: np.ndarray
    barycenter_route: np.ndarray
    beta: np.ndarray
    H_xi0: float
    iterations: dict = field(default_factory=dict)
    residual: float = 0.0

    @property
    def route_gap(self):
        return float(np.max(np.abs(self.optimizer_route - self.barycenter_route)))


def _fd_grad_hess(fun, x, step):
    n = x.size
    f0 = fun(x)
    g = np.zeros(n)
    H = np.zeros((n, n))
    E = np.eye(n) * step
    fp = [fun(x + E[i]) for i in range(n)]
    fm = [fun(x - E[i]) for i in range(n)]
    for i in range(n):
        g[i] = (fp[i] - fm[i]) / (2 * step)
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / step**2
        for j in range(i):
            pp = fun(x + E[i] + E[j])
            mm = fun(x - E[i] - E[j])
            # d_i d_j f from the diagonal stencil
            H[i, j] = H[j, i] = (pp - fp[i] - fp[j] + 2 * f0 - fm[i] - fm[j] + mm) / (2 * step**2)
    return f0, g, H


def maximize_h_invariant(u, maxiter=100, step=1e-3, gtol=1e-10):
    """Damped Newton ascent on ``xi -> H(xi)`` with finite-difference
    derivatives, starting at 0."""
    n = u.model.n
    h = ricci_potential(u).h
    eh = np.exp(h)
    rule, P, Cn = u.rule, u.P, u.model.C_n

    def H(xi):
        theta = TorusVector(xi).hamiltonian(rule, P)
        return Cn * float(rule.integrate(theta * eh))

    xi = np.zeros(n)
    scale = u.model.V
    for it in range(maxiter):
        f0, g, Hs = _fd_grad_hess(H, xi, step)
        if np.max(np.abs(g)) < gtol * scale:
            return xi, it
        try:
            # ascent direction from the concave model; fall back to gradient
            d = -np.linalg.solve(Hs, g)
            if d @ g <= 0:
                d = g / scale
        except np.linalg.LinAlgError:
            d = g / scale
        a = 1.0
        while a > 1e-10 and H(xi + a * d) < f0 + 1e-4 * a * (d @ g):
            a *= 0.5
        if a <= 1e-10:
            break
        xi = xi + a * d
    _, g, _ = _fd_grad_hess(H, xi, step)
    if np.max(np.abs(g)) < 1e3 * gtol * scale:
        return xi, maxiter
    raise ConvergenceFailure("H-maximization did not converge", best=xi,
                             residual=float(np.max(np.abs(g))))


def solve_barycenter(rule, target, maxiter=100, tol=1e-14):
    """Newton for ``bary(e^{<xi,x>} dx) = target`` with covariance Jacobian."""
    target = np.asarray(target, dtype=float)
    xi = np.zeros_like(target)
    mean, cov = _weighted_moments(rule, xi)
    r = mean - target
    for it in range(maxiter):
        if np.max(np.abs(r)) < tol:
            return xi, it
        d = -np.linalg.solve(cov, r)
        a = 1.0
        while True:
            m2, c2 = _weighted_moments(rule, xi + a * d)
            r2 = m2 - target
            if np.linalg.norm(r2) < (1 - 1e-4 * a) * np.linalg.norm(r) or a < 1e-8:
                break
            a *= 0.5
        xi, r, cov = xi + a * d, r2, c2
    if np.max(np.abs(r)) < 1e3 * tol:
        return xi, maxiter
    raise ConvergenceFailure("barycenter Newton diverged", best=xi,
                             residual=float(np.max(np.abs(r))))


def extremal_field(model, metric=None):
    """The maximizer ``xi0`` of ``H``, computed two ways.

    Route (a) maximizes ``H`` directly; route (b) solves the stationarity
    condition ``bary(e^{<xi,x>} dx) = beta``. The returned ``xi0`` is route (b).
    """
    u = SymplecticPotential(model) if metric is None else metric
    beta, _ = beta_vector(model, u)
    xa, ita = maximize_h_invariant(u)
    xb, itb = solve_barycenter(u.rule, beta)
    xi0 = TorusVector(xb)
    mean, _ = _weighted_moments(u.rule, xb)
    return ExtremalField(
        xi0=xi0,
        optimizer_route=xa,
        barycenter_route=xb,
        beta=beta,
        H_xi0=h_invariant(u, xi0),
        iterations={"optimizer": ita, "barycenter": itb},
        residual=float(np.max(np.abs(mean - beta))),
    )
