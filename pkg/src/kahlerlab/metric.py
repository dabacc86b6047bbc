"""Torus-invariant Kähler metrics through symplectic potentials.

A metric is a convex function ``u = u_ref + psi`` on the moment polytope with
``u_ref = sum_k l_k log l_k``. In these coordinates the Ricci potential is

    h = log det D^2u - <x, Du> + u + c,

normalized so that ``int_P e^h dx = vol(P)``. The pushforward of ``omega^n``
under the moment map is ``C_n`` times Lebesgue measure, ``C_n = (2 pi)^n n!``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (ConvergenceFailure, DegenerateMetricError, InvalidArgument,
                     NumericalOverflowError)
from .geometry import DEFAULT_ORDER, Polytope, build_model, quadrature
from .terms import Term, ZeroTerm, make_psi


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    polytope: Polytope
    order: int = 0

    @property
    def n(self):
        return self.polytope.dim

    @property
    def C_n(self):
        return (2 * math.pi) ** self.n * math.factorial(self.n)

    @property
    def V(self):
        return self.C_n * self.polytope.volume

    @property
    def vol(self):
        return self.polytope.volume

    @property
    def name(self):
        return self.polytope.name

    def rule(self, cuts=()):
        return quadrature(self.polytope, self.order or DEFAULT_ORDER[self.n], cuts)

    @cached_property
    def default_rule(self):
        return self.rule()


def get_model(name, order=None):
    return ManifoldModel(build_model(name), int(order or 0))


def reference_derivatives(P, x, order=2):
    """Derivatives of ``u_ref = sum_k l_k log l_k`` up to ``order`` (<= 4)."""
    x = np.asarray(x, dtype=float).reshape(-1, P.dim)
    s = P.slack(x)
    if np.any(s <= 0):
        raise InvalidArgument("points must lie strictly inside the polytope")
    N = np.asarray(P.normals, dtype=float)
    logs = np.log(s)
    out = [np.sum(s * logs, axis=1), (logs + 1.0) @ N]
    if order >= 2:
        out.append(np.einsum("pk,ki,kj->pij", 1.0 / s, N, N))
    if order >= 3:
        out.append(-np.einsum("pk,ki,kj,kl->pijl", s**-2, N, N, N))
    if order >= 4:
        out.append(2.0 * np.einsum("pk,ki,kj,kl,km->pijlm", s**-3, N, N, N, N))
    return out[: order + 1]


def _det_inv(H):
    """Determinant and inverse of a stack of 1x1 or 2x2 matrices."""
    n = H.shape[-1]
    if n == 1:
        det = H[:, 0, 0]
        with np.errstate(divide="ignore"):
            inv = (1.0 / det)[:, None, None]
        return det, inv
    a, b, c, d = H[:, 0, 0], H[:, 0, 1], H[:, 1, 0], H[:, 1, 1]
    det = a * d - b * c
    inv = np.empty_like(H)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv[:, 0, 0], inv[:, 0, 1] = d / det, -b / det
        inv[:, 1, 0], inv[:, 1, 1] = -c / det, a / det
    return det, inv


def _check_pd(H, where="quadrature node"):
    if H.shape[-1] == 1:
        ok = H[:, 0, 0] > 0
    else:
        ok = (H[:, 0, 0] > 0) & (H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0] > 0)
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise DegenerateMetricError(f"Hessian of u is not positive definite at {where} {bad}")


class SymplecticPotential:
    """Convex symplectic potential ``u = u_ref + psi`` on a quadrature rule.

    ``psi`` is a :class:`~kahlerlab.terms.Term`; node data are cached.
    """

    def __init__(self, model, psi=None, rule=None, label=None):
        if isinstance(model, str):
            model = get_model(model)
        self.model = model
        self.psi = ZeroTerm(model.n) if psi is None else psi
        if self.psi.dim != model.n:
            raise InvalidArgument("perturbation dimension does not match the model")
        if rule is None:
            cuts = self.psi.cuts
            rule = model.rule(cuts) if cuts else model.default_rule
        self.rule = rule
        self.label = label

    @property
    def P(self):
        return self.model.polytope

    def derivatives(self, x, order=2):
        ref = reference_derivatives(self.P, x, order)
        pert = self.psi.derivatives(x, order)
        return [r + p for r, p in zip(ref, pert)]

    @cached_property
    def node_data(self):
        x = self.rule.nodes
        u, g, H = self.derivatives(x, 2)
        _check_pd(H)
        det, Hinv = _det_inv(H)
        return {"x": x, "u": u, "grad": g, "hess": H, "hess_inv": Hinv, "logdet": np.log(det)}

    def check_valid(self):
        self.node_data
        return self

    @cached_property
    def log_density(self):
        """Unnormalized Ricci potential ``log det D^2u - <x,Du> + u`` at nodes.

        ``e^{log_density} dx`` is the Legendre pullback of ``e^{-f} dy``.
        """
        d = self.node_data
        return d["logdet"] - np.einsum("pi,pi->p", d["x"], d["grad"]) + d["u"]

    def with_psi(self, psi, rule=None):
        return SymplecticPotential(self.model, psi, rule=rule)

    def to_dict(self):
        return {"model": self.model.name, **_psi_record(self.psi)}

    def __repr__(self):
        return f"SymplecticPotential({self.model.name}, {self.label or self.psi.to_dict()})"


def _psi_record(psi):
    d = psi.to_dict()
    if d["type"] == "zero":
        return {"psi_catalog_id": "zero", "coefficients": None}
    if d["type"] == "poly":
        return {"psi_catalog_id": "poly", "coefficients": d["coefficients"]}
    return {"psi_catalog_id": "term", "coefficients": d}


def metric_from_dict(d, order=None):
    """Inverse of :meth:`SymplecticPotential.to_dict`."""
    from .terms import term_from_dict

    unknown = set(d) - {"model", "psi_catalog_id", "coefficients"}
    if unknown:
        raise InvalidArgument(f"unknown metric keys: {sorted(unknown)}")
    model = get_model(d["model"], order)
    cid = d.get("psi_catalog_id", "zero")
    if cid == "term":
        psi = term_from_dict(d["coefficients"])
    else:
        psi = make_psi(model.polytope, cid, d.get("coefficients"))
    return SymplecticPotential(model, psi)


@dataclass(frozen=True, eq=False)
class RicciPotential:
    """Normalized Ricci potential on the nodes of ``rule``."""

    h: np.ndarray
    c: float
    rule: object = field(repr=False)

    def integral_exp(self):
        return float(self.rule.integrate(np.exp(self.h)))


def _log_integral_exp(rule, logf):
    m = float(np.max(logf))
    if not np.isfinite(m):
        raise NumericalOverflowError("normalization integrand is not finite")
    s = float(rule.integrate(np.exp(logf - m)))
    if not (np.isfinite(s) and s > 0):
        raise NumericalOverflowError("normalization integral is not finite")
    return m + math.log(s)


def ricci_potential(u):
    """Ricci potential ``h`` of the metric ``u``, normalized by
    ``int_P e^h dx = vol(P)``."""
    logd = u.log_density
    if not np.all(np.isfinite(logd)):
        raise NumericalOverflowError("log density is not finite at some node")
    c = math.log(u.model.vol) - _log_integral_exp(u.rule, logd)
    return RicciPotential(logd + c, c, u.rule)


def ricci_gradient(u, with_laplacian=False):
    """Gradient of ``h`` at the nodes (and the metric Laplacian if asked).

    ``dh_j = u^{ab} u_{abj} - x_k u_{kj}``; the Laplacian is the divergence
    form ``d_i(u^{ij} d_j h)``.
    """
    x = u.rule.nodes
    order = 4 if with_laplacian else 3
    d = u.derivatives(x, order)
    H, T = d[2], d[3]
    _check_pd(H)
    _, Hi = _det_inv(H)
    grad = np.einsum("pab,pabj->pj", Hi, T) - np.einsum("pk,pkj->pj", x, H)
    if not with_laplacian:
        return grad
    Q = d[4]
    # d_i u^{ab} = -u^{ac} u_{cdi} u^{db}
    dHi = -np.einsum("pac,pcdi,pdb->piab", Hi, T, Hi)
    hess = (np.einsum("piab,pabj->pij", dHi, T) + np.einsum("pab,pabij->pij", Hi, Q)
            - H - np.einsum("pk,pkij->pij", x, T))
    div_Hi = np.einsum("piij->pj", dHi)
    lap = np.einsum("pij,pij->p", Hi, hess) + np.einsum("pj,pj->p", div_Hi, grad)
    return grad, lap


def grad_pairing(a, b, u):
    """Metric pairing ``<grad a, grad b>_g = Da^T (D^2u)^{-1} Db`` at the nodes.

    ``a`` and ``b`` are gradients at the nodes, shape ``(N, n)``, or terms.
    """
    nodes = u.rule.nodes
    da = a.derivatives(nodes, 1)[1] if isinstance(a, Term) else np.asarray(a, dtype=float)
    db = b.derivatives(nodes, 1)[1] if isinstance(b, Term) else np.asarray(b, dtype=float)
    shape = nodes.shape
    if da.shape != shape or db.shape != shape:
        raise InvalidArgument(f"gradients must have shape {shape}, got {da.shape} and {db.shape}")
    Hi = u.node_data["hess_inv"]
    return np.einsum("pi,pij,pj->p", da, Hi, db)


@dataclass(eq=False)
class ComplexPotential:
    """Kähler potential ``f(y)`` in logarithmic coordinates (``n = 1``).

    ``slopes`` holds ``f'(-L), f'(L)``; ``source`` is the symplectic potential
    the grid was produced from, if any.
    """

    model: ManifoldModel
    y: np.ndarray
    f: np.ndarray
    slopes: tuple
    x: np.ndarray = None
    fpp: np.ndarray = None
    source: SymplecticPotential = None

    @property
    def L(self):
        return float(self.y[-1])

    @property
    def dy(self):
        return float(self.y[1] - self.y[0])

    def second_difference(self):
        f = self.f
        return (f[:-2] - 2 * f[1:-1] + f[2:]) / self.dy**2

    def check_valid(self, tol=0.0):
        if np.any(self.second_difference() <= tol):
            raise DegenerateMetricError("f is not strictly convex on the grid")
        lo, hi = self.model.polytope.vertices.min(), self.model.polytope.vertices.max()
        if not (lo < self.slopes[0] < self.slopes[1] < hi):
            raise InvalidArgument("asymptotic slopes must lie inside the polytope")
        return self

    def evaluate(self, y):
        """``f, f', f''`` at arbitrary ``y`` (needs an analytic source)."""
        if self.source is None:
            raise InvalidArgument("this grid potential has no analytic source")
        return legendre_point(self.source, np.asarray(y, dtype=float))


MAX_WINDOW = 30.0


def _solve_gradient_1d(u, y, maxiter=50, tol=1e-13):
    """Solve ``u'(x) = y`` on the interval by safeguarded Newton.

    Iterates in ``z`` with ``x = tanh(z / 2)``, where ``u_ref'(x) = z`` for the
    symmetric interval, so the equation is nearly linear in ``z``.
    """
    lo, hi = float(u.P.vertices.min()), float(u.P.vertices.max())
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    z = np.array(y, dtype=float)
    zlo = np.full_like(z, -np.inf)
    zhi = np.full_like(z, np.inf)
    r = np.full_like(z, np.inf)
    # on [-1, 1] the reference gradient is z itself; forming it from x would
    # lose the facet distance 1 - |x| to rounding once |z| exceeds ~20
    split = isinstance(u, SymplecticPotential) and lo == -1.0 and hi == 1.0
    for it in range(maxiter):
        t = np.tanh(0.5 * z)
        x = mid + half * t
        dxdz = 0.5 * half / np.cosh(0.5 * z) ** 2
        if split:
            _, g, H = u.psi.derivatives(x[:, None], 2)
            r = z + g[:, 0] - y
            slope = 1.0 + H[:, 0, 0] * dxdz
        else:
            _, g, H = u.derivatives(x[:, None], 2)
            r = g[:, 0] - y
            slope = H[:, 0, 0] * dxdz
        up = r > 0
        zhi = np.where(up, np.minimum(zhi, z), zhi)
        zlo = np.where(up, zlo, np.maximum(zlo, z))
        zn = z - r / slope
        bad = ~((zn > zlo) & (zn < zhi)) | ~np.isfinite(zn)
        both = np.isfinite(zlo) & np.isfinite(zhi)
        fallback = np.where(both, 0.5 * (zlo + zhi), np.where(up, z - 1.0, z + 1.0))
        zn = np.where(bad, fallback, zn)
        # near the boundary u' is only accurate to ~1e-12 relative
        done = (np.abs(zn - z) <= tol * (1 + np.abs(z))) | (np.abs(r) <= 1e-11 * (1 + np.abs(y)))
        z = np.where(done, z, zn)
        if np.all(done):
            t = np.tanh(0.5 * z)
            return mid + half * t
    raise ConvergenceFailure("Legendre inner Newton did not converge in "
                             f"{maxiter} iterations", best=mid + half * np.tanh(0.5 * z),
                             residual=float(np.max(np.abs(r))))


def legendre_point(u, y):
    """``f(y) = sup_x (x y - u(x))`` with ``f'`` and ``f''`` for ``n = 1``."""
    if u.model.n != 1:
        raise InvalidArgument("Legendre duals are implemented for n = 1 only")
    y = np.atleast_1d(y).astype(float)
    x = _solve_gradient_1d(u, y)
    val, _, H = u.derivatives(x[:, None], 2)
    return x * y - val, x, 1.0 / H[:, 0, 0]


def legendre_dual(u, L, m):
    """Sample the Legendre dual of ``u`` on a uniform grid of ``[-L, L]``."""
    if u.model.n != 1:
        raise InvalidArgument("Legendre duals are implemented for n = 1 only")
    if not L > 0:
        raise InvalidArgument(f"L must be positive, got {L}")
    if L > MAX_WINDOW:
        # beyond this the dual point rounds onto a facet in double precision
        raise InvalidArgument(f"L must be at most {MAX_WINDOW}, got {L}")
    if int(m) != m or m < 16:
        raise InvalidArgument(f"need at least 16 grid points, got {m}")
    y = np.linspace(-L, L, int(m))
    f, x, fpp = legendre_point(u, y)
    return ComplexPotential(u.model, y, f, (float(x[0]), float(x[-1])), x, fpp, source=u)


def legendre_back(cp, x, maxiter=60, tol=1e-14):
    """Dualize back: ``u(x) = sup_y (x y - f(y))`` using only ``f``, ``f'``,
    ``f''`` from ``cp.evaluate``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.zeros_like(x)
    for _ in range(maxiter):
        f, fp, fpp = cp.evaluate(y)
        step = (fp - x) / fpp
        # damp steps in the flat tails where f'' is tiny
        step = np.clip(step, -2.0, 2.0)
        y = y - step
        if np.all(np.abs(step) < tol * (1 + np.abs(y))):
            break
    f, fp, _ = cp.evaluate(y)
    return x * y - f


def random_metric(model, rng, degree=3, scale=0.08, max_tries=30):
    """Seeded random catalog metric: a bump polynomial scaled until convex."""
    P = model.polytope
    if P.dim == 1:
        c = rng.normal(size=degree + 1)
    else:
        c = np.zeros((degree + 1, degree + 1))
        for i, j in np.ndindex(*c.shape):
            if i + j <= degree:
                c[i, j] = rng.normal()
    c = scale * c / np.max(np.abs(c))
    for _ in range(max_tries):
        u = SymplecticPotential(model, make_psi(P, "bump", c))
        try:
            u.check_valid()
            return u
        except DegenerateMetricError:
            c = 0.5 * c
    raise DegenerateMetricError("could not produce a convex random metric")


def metric_catalog(model, count=5, seed=0):
    """Reference metric followed by ``count - 1`` seeded random metrics."""
    rng = np.random.default_rng(seed)
    out = [SymplecticPotential(model, label="reference")]
    for k in range(count - 1):
        u = random_metric(model, rng)
        u.label = f"random[{seed}:{k}]"
        out.append(u)
    return out


def model_and_metric(name, catalog_id="zero", coefficients=None, order=None):
    model = get_model(name, order)
    return SymplecticPotential(model, make_psi(model.polytope, catalog_id, coefficients))
