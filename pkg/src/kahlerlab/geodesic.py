"""Geodesics of invariant Kähler potentials and the probes built on them.

In the torus-invariant class a geodesic is a straight line of symplectic
potentials ``u_t = u_0 + t v`` with ``v`` convex on the polytope. The Kähler
potential then satisfies ``dphi/dt = -v`` in moment coordinates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceFailure, DegenerateMetricError, InvalidArgument
from .functionals import (f_derivative_along, f_value, modified_f_derivative_along)
from .metric import (ComplexPotential, SymplecticPotential, grad_pairing, legendre_dual,
                     legendre_point, ricci_potential)
from .terms import AffineTerm, PolynomialTerm, RampTerm, SumTerm, Term

RAY_TYPES = ("affine", "pl", "poly")
PROBE_TIMES = (0.0, 1.0, 2.0, 4.0, 8.0)
ON_CATALOG_NOTE = ("verdicts are on-catalog: a finite family of smooth invariant rays "
                   "cannot certify stability against all rays")


def ray_direction(model, entry):
    """Direction ``v`` of a catalog ray.

    ``affine`` with ``xi`` is the ray generated by the torus vector ``xi``:
    ``dphi/dt = <xi, x> + c`` up to a constant, i.e. ``v = -<xi, x> - c``.
    ``pl`` is ``max(0, <a, x> + b)`` with a fillet of half-width ``delta``.
    ``poly`` is a polynomial that must be convex on the polytope.
    """
    if not isinstance(entry, dict) or "type" not in entry:
        raise InvalidArgument("ray entries are objects with a 'type' key")
    unknown = set(entry) - {"type", "params", "label"}
    if unknown:
        raise InvalidArgument(f"unknown ray keys: {sorted(unknown)}")
    kind, params = entry["type"], dict(entry.get("params", {}))
    n = model.n
    if kind == "affine":
        _only(params, {"xi", "c"})
        xi = np.atleast_1d(np.asarray(params["xi"], dtype=float))
        if xi.size != n:
            raise InvalidArgument(f"affine ray needs xi of length {n}")
        return AffineTerm(-xi, -float(params.get("c", 0.0)))
    if kind == "pl":
        _only(params, {"a", "b", "delta"})
        a = np.atleast_1d(np.asarray(params["a"], dtype=float))
        if a.size != n:
            raise InvalidArgument(f"pl ray needs a of length {n}")
        delta = float(params.get("delta", 1e-2))
        if delta <= 0:
            raise InvalidArgument("pl ray needs delta > 0")
        return RampTerm(a, float(params.get("b", 0.0)), delta)
    if kind == "poly":
        _only(params, {"coefficients"})
        v = PolynomialTerm(params["coefficients"], n)
        H = v.derivatives(model.default_rule.nodes, 2)[2]
        if np.min(np.linalg.eigvalsh(H)) < -1e-12:
            raise InvalidArgument("poly ray direction is not convex on the polytope")
        return v
    raise InvalidArgument(f"unknown ray type {kind!r}; choose from {RAY_TYPES}")


def _only(params, allowed):
    extra = set(params) - allowed
    if extra:
        raise InvalidArgument(f"unknown ray parameters: {sorted(extra)}")


def default_ray_catalog(model, delta=1e-2):
    """The built-in ray family for a model, in the JSON catalog format."""
    if model.n == 1:
        return [
            {"type": "affine", "params": {"xi": [1.0]}},
            {"type": "affine", "params": {"xi": [-1.0]}},
            {"type": "pl", "params": {"a": [1.0], "b": 0.0, "delta": delta}},
            {"type": "pl", "params": {"a": [-1.0], "b": 0.0, "delta": delta}},
            {"type": "pl", "params": {"a": [1.0], "b": -0.5, "delta": delta}},
            {"type": "pl", "params": {"a": [1.0], "b": 0.5, "delta": delta}},
            {"type": "poly", "params": {"coefficients": [0.0, 0.0, 1.0]}},
        ]
    return [
        {"type": "affine", "params": {"xi": [1.0, 0.0]}},
        {"type": "affine", "params": {"xi": [0.0, 1.0]}},
        {"type": "affine", "params": {"xi": [-1.0, -1.0]}},
        {"type": "pl", "params": {"a": [1.0, 0.0], "b": 0.0, "delta": delta}},
        {"type": "pl", "params": {"a": [0.0, 1.0], "b": 0.0, "delta": delta}},
        {"type": "pl", "params": {"a": [-1.0, 0.0], "b": 0.0, "delta": delta}},
        {"type": "pl", "params": {"a": [1.0, 1.0], "b": -0.5, "delta": delta}},
        {"type": "poly", "params": {"coefficients": [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]}},
    ]


def load_ray_catalog(source):
    """Read a catalog from a JSON file path, JSON text, or a list."""
    if isinstance(source, (list, tuple)):
        entries = list(source)
    else:
        text = str(source)
        if not text.lstrip().startswith(("[", "{")):
            with open(text) as fh:
                text = fh.read()
        entries = json.loads(text)
    if not isinstance(entries, list):
        raise InvalidArgument("a ray catalog is a JSON list")
    return entries


class GeodesicPath:
    """``u_t = u_0 + t v`` on ``[0, T]`` (segment) or ``[0, inf)`` (ray)."""

    def __init__(self, u0, v, kind="ray", T=None, label=None):
        if kind not in ("ray", "segment"):
            raise InvalidArgument("kind is 'ray' or 'segment'")
        if kind == "segment" and not (T and T > 0):
            raise InvalidArgument("a segment needs T > 0")
        if not isinstance(v, Term) or v.dim != u0.model.n:
            raise InvalidArgument("direction must be a term of the model dimension")
        self.model = u0.model
        self.v = v
        self.kind = kind
        self.T = float(T) if kind == "segment" else float("inf")
        self.label = label
        cuts = tuple(dict.fromkeys(tuple(u0.psi.cuts) + tuple(v.cuts)))
        self.rule = self.model.rule(cuts) if cuts else u0.rule
        self.u0 = SymplecticPotential(self.model, u0.psi, rule=self.rule, label=u0.label)
        self.v_nodes = v.derivatives(self.rule.nodes, 0)[0]
        self._cache = {}

    @classmethod
    def segment(cls, u0, u1, T=1.0):
        v = SumTerm([u1.psi, u0.psi], [1.0 / T, -1.0 / T])
        return cls(u0, v, "segment", T)

    def in_domain(self, t):
        return 0.0 <= t <= self.T

    def metric_at(self, t):
        t = float(t)
        if t not in self._cache:
            psi = SumTerm([self.u0.psi, self.v], [1.0, t])
            u = SymplecticPotential(self.model, psi, rule=self.rule)
            u.check_valid()
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[t] = u
        return self._cache[t]

    def check_domain(self, ts):
        """Raise if ``D^2 u_t`` fails to be positive definite at some sampled t."""
        for t in ts:
            self.metric_at(t)
        return self

    def phi_dot_check(self, ys, t=0.0, step=1e-4):
        """Max of ``|d/dt f_t(y) + v(x(y))|`` at fixed ``y`` (n = 1).

        Central difference in ``t``; one-sided second order at ``t = 0``.
        """
        if self.model.n != 1:
            raise InvalidArgument("the Legendre identity check is for n = 1")
        ys = np.asarray(ys, dtype=float)

        def f(s):
            return legendre_point(self.metric_at(s), ys)[0]

        if t - step < 0:
            fd = (-3 * f(t) + 4 * f(t + step) - f(t + 2 * step)) / (2 * step)
        else:
            fd = (f(t + step) - f(t - step)) / (2 * step)
        x = legendre_point(self.metric_at(t), ys)[1]
        return float(np.max(np.abs(fd + self.v(x[:, None]))))

    def to_dict(self):
        return {"kind": self.kind, "T": None if self.kind == "ray" else self.T,
                "u0": self.u0.to_dict(), "v": self.v.to_dict()}


def ray_from_entry(base, entry):
    v = ray_direction(base.model, entry)
    return GeodesicPath(base, v, "ray", label=entry.get("label") or _entry_label(entry))


def _entry_label(entry):
    p = entry.get("params", {})
    return entry["type"] + ":" + ",".join(f"{k}={p[k]}" for k in sorted(p))


# -- H along geodesics --------------------------------------------------------

def h_of_t(path, t):
    """``H(t) = int phi' e^{h_t} omega_t^n = -C_n int v e^{h_t} dx``."""
    if not np.any(path.v_nodes):
        return 0.0
    h = ricci_potential(path.metric_at(t)).h
    return -path.model.C_n * float(path.rule.integrate(path.v_nodes * np.exp(h)))


def h_rhs(path, t):
    """``C_n int (|grad v|^2 - (v - a)^2) e^{h_t} dx`` with ``a`` the
    ``e^{h_t}``-mean of ``v``; nonnegative by the weighted Poincare inequality."""
    if not np.any(path.v_nodes):
        return 0.0
    u = path.metric_at(t)
    eh = np.exp(ricci_potential(u).h)
    rule, v = path.rule, path.v_nodes
    a = float(rule.integrate(v * eh)) / float(rule.integrate(eh))
    dv = path.v.derivatives(rule.nodes, 1)[1]
    integrand = (grad_pairing(dv, dv, u) - (v - a) ** 2) * eh
    return path.model.C_n * float(rule.integrate(integrand))


def dh_dt_identity(path, t, step=1e-3):
    """``(fd_slope, rhs)``: Richardson-extrapolated central difference of
    :func:`h_of_t` and the quadrature right-hand side."""
    if not np.any(path.v_nodes):
        return 0.0, 0.0
    if t - 2 * step < 0 and path.kind == "ray":
        # one-sided fourth-order stencil at the start of a ray
        hs = [h_of_t(path, t + k * step) for k in range(5)]
        fd = (-25 * hs[0] + 48 * hs[1] - 36 * hs[2] + 16 * hs[3] - 3 * hs[4]) / (12 * step)
    else:
        d1 = (h_of_t(path, t + step) - h_of_t(path, t - step)) / (2 * step)
        d2 = (h_of_t(path, t + 2 * step) - h_of_t(path, t - 2 * step)) / (4 * step)
        fd = (4 * d1 - d2) / 3
    return fd, h_rhs(path, t)


# -- stability ----------------------------------------------------------------

@dataclass
class RayRecord:
    label: str
    times: list
    slopes: list
    terminal_slope: float
    first_nonnegative_t: float | None
    modified_slopes: list = field(default_factory=list)
    modified_terminal_slope: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def stability_probe(model, base, ray_catalog=None, X=None, times=PROBE_TIMES, tol=1e-6):
    """Sample ``dF/dt`` (and ``dF_X/dt`` when ``X`` is given) along each ray.

    Returns a dict with per-ray records and on-catalog verdicts for ``F``
    and, if requested, ``F_X``.
    """
    if base.model.polytope is not model.polytope and base.model.name != model.name:
        raise InvalidArgument("base metric belongs to a different model")
    entries = load_ray_catalog(ray_catalog if ray_catalog is not None
                               else default_ray_catalog(model))
    records = []
    for entry in entries:
        path = ray_from_entry(base, entry)
        slopes = [f_derivative_along(path, t)[1] for t in times]
        first = next((t for t, s in zip(times, slopes) if s >= -tol), None)
        rec = RayRecord(path.label, list(times), slopes, slopes[-1], first)
        if X is not None:
            ms = [modified_f_derivative_along(path, t, X) for t in times]
            rec.modified_slopes = ms
            rec.modified_terminal_slope = ms[-1]
        records.append(rec)
    report = {
        "scope": ON_CATALOG_NOTE,
        "model": model.name,
        "tolerance": tol,
        "rays": [r.to_dict() for r in records],
        "F_semistable_on_catalog": all(r.terminal_slope >= -tol for r in records),
        "F_destabilizing_rays": [r.label for r in records if r.terminal_slope < -tol],
    }
    if X is not None:
        report["X"] = list(np.atleast_1d(getattr(X, "components", X)).astype(float))
        report["FX_semistable_on_catalog"] = all(
            r.modified_terminal_slope >= -tol for r in records)
    return report


def path_trace(path, times, X=None):
    """Rows ``(t, H_of_t, F, dF, dFX)`` for the CSV trace."""
    rows = []
    for t in times:
        dF = f_derivative_along(path, t)[1]
        dFX = modified_f_derivative_along(path, t, X) if X is not None else float("nan")
        rows.append((float(t), h_of_t(path, t), f_value(path, t), dF, dFX))
    return rows


# -- epsilon-regularized geodesic equation (n = 1) ----------------------------

@dataclass
class EpsGeodesicProblem:
    """``F_tt F_yy - F_ty^2 = eps * ref`` on ``[0, T] x [-L, L]``.

    ``F(0, .) = f0``, ``F(T, .) = f1``; at ``y = +-L`` the data are
    interpolated linearly in ``t``, which is exact for the affine
    asymptotics ``f ~ |y| + const`` up to terms of size ``e^{-L}``.
    ``ref`` defaults to ``f0''``.
    """

    f0: ComplexPotential
    f1: ComplexPotential
    epsilon: float
    T: float = 1.0
    nt: int = 40
    ref: np.ndarray | None = None

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InvalidArgument("epsilon must be strictly positive")
        if self.T <= 0 or self.nt < 2:
            raise InvalidArgument("need T > 0 and at least 2 time intervals")
        if self.f0.y.shape != self.f1.y.shape or np.max(np.abs(self.f0.y - self.f1.y)) > 0:
            raise InvalidArgument("endpoints must share the y-grid")
        for f in (self.f0, self.f1):
            if np.min(f.second_difference()) <= 0:
                raise InvalidArgument("endpoint potential is not strictly convex")
        if self.ref is None:
            self.ref = self.f0.fpp if self.f0.fpp is not None else np.concatenate(
                [[np.nan], self.f0.second_difference(), [np.nan]])
        self.ref = np.asarray(self.ref, dtype=float)

    @property
    def y(self):
        return self.f0.y

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    def boundary_frame(self):
        """Array with Dirichlet data on the boundary of the mesh."""
        s = (self.t / self.T)[:, None]
        return (1 - s) * self.f0.f[None, :] + s * self.f1.f[None, :]


@dataclass
class EpsGeodesicSolution:
    t: np.ndarray
    y: np.ndarray
    F: np.ndarray
    epsilon: float
    residual: float
    iterations: int


def _ma_residual(F, dt, dy, eps_ref):
    """``F_tt - (F_ty^2 + eps ref) / F_yy`` at interior nodes, its partial
    derivatives with respect to ``(F_tt, F_ty, F_yy)``, the merit ``max|R|``
    and the Monge-Ampere residual ``max|F_tt F_yy - F_ty^2 - eps ref|``."""
    Ftt = (F[2:, 1:-1] - 2 * F[1:-1, 1:-1] + F[:-2, 1:-1]) / dt**2
    Fyy = (F[1:-1, 2:] - 2 * F[1:-1, 1:-1] + F[1:-1, :-2]) / dy**2
    Fty = (F[2:, 2:] - F[2:, :-2] - F[:-2, 2:] + F[:-2, :-2]) / (4 * dt * dy)
    if np.min(Fyy) <= 0:
        raise DegenerateMetricError("iterate lost convexity in y")
    num = Fty**2 + eps_ref
    R = Ftt - num / Fyy
    coef = (np.ones_like(R), -2 * Fty / Fyy, num / Fyy**2)
    return R, coef, float(np.max(np.abs(R))), float(np.max(np.abs(R * Fyy)))


def _ma_jacobian(shape, dt, dy, coef):
    """Sparse Jacobian of the interior residual w.r.t. interior unknowns."""
    ni, nj = shape
    a_tt, a_ty, a_yy = coef
    idx = np.arange(ni * nj).reshape(ni, nj)
    rows, cols, vals = [], [], []

    def add(di, dj, w):
        I, J = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
        ii, jj = I + di, J + dj
        ok = (ii >= 0) & (ii < ni) & (jj >= 0) & (jj < nj)
        rows.append(idx[ok])
        cols.append(idx[ii[ok], jj[ok]])
        vals.append(np.broadcast_to(w, (ni, nj))[ok])

    add(0, 0, -2 * a_tt / dt**2 - 2 * a_yy / dy**2)
    add(1, 0, a_tt / dt**2)
    add(-1, 0, a_tt / dt**2)
    add(0, 1, a_yy / dy**2)
    add(0, -1, a_yy / dy**2)
    c = a_ty / (4 * dt * dy)
    add(1, 1, c)
    add(-1, -1, c)
    add(1, -1, -c)
    add(-1, 1, -c)
    n = ni * nj
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def eps_geodesic_solve(problem, initial=None, tol=1e-8, maxiter=50):
    """Damped Newton for the discretized regularized geodesic equation.

    ``initial`` is a full mesh array (boundary rows and columns are reset to
    the Dirichlet data); by default the linear interpolation of the
    endpoints is used.
    """
    t, y = problem.t, problem.y
    dt, dy = t[1] - t[0], y[1] - y[0]
    frame = problem.boundary_frame()
    F = frame.copy() if initial is None else np.array(initial, dtype=float)
    F[0], F[-1], F[:, 0], F[:, -1] = frame[0], frame[-1], frame[:, 0], frame[:, -1]
    eps_ref = problem.epsilon * problem.ref[None, 1:-1]
    R, coef, merit, rnorm = _ma_residual(F, dt, dy, eps_ref)
    for it in range(maxiter):
        if rnorm < tol:
            return EpsGeodesicSolution(t, y, F, problem.epsilon, rnorm, it)
        J = _ma_jacobian(R.shape, dt, dy, coef)
        d = spsolve(J, -R.ravel()).reshape(R.shape)
        a = 1.0
        while True:
            G = F.copy()
            G[1:-1, 1:-1] += a * d
            try:
                R2, coef2, m2, r2 = _ma_residual(G, dt, dy, eps_ref)
            except DegenerateMetricError:
                m2 = np.inf
            if m2 < (1 - 1e-4 * a) * merit or a < 1e-6:
                break
            a *= 0.5
        if not np.isfinite(m2):
            break
        F, R, coef, merit, rnorm = G, R2, coef2, m2, r2
    if rnorm < tol:
        return EpsGeodesicSolution(t, y, F, problem.epsilon, rnorm, maxiter)
    raise ConvergenceFailure(f"regularized geodesic Newton stalled at residual {rnorm:.3e}",
                             best=F, residual=rnorm)


def exact_toric_geodesic(u0, u1, T, t, L, m):
    """Legendre duals of ``u0 + (t/T)(u1 - u0)`` on the ``(t, y)`` mesh."""
    path = GeodesicPath.segment(u0, u1, T)
    duals = [legendre_dual(path.metric_at(s), L, m) for s in t]
    return np.array([d.f for d in duals]), np.array([d.fpp for d in duals])


def eps_convergence_study(u0, u1, T=1.0, L=10.0, m=801, nt=40,
                          epsilons=(1e-1, 1e-2, 1e-3)):
    """Solve for each ``eps`` (largest first, continuing the solution) and
    return ``(epsilons, sup_errors, slope, solutions)``."""
    f0, f1 = legendre_dual(u0, L, m), legendre_dual(u1, L, m)
    t = np.linspace(0.0, T, nt + 1)
    exact, exact_fpp = exact_toric_geodesic(u0, u1, T, t, L, m)
    errors, sols = [], []
    guess = None
    for k, eps in enumerate(sorted(epsilons, reverse=True)):
        prob = EpsGeodesicProblem(f0, f1, eps, T, nt)
        if guess is None:
            guess = exact
        sol = eps_geodesic_solve(prob, initial=guess)
        sols.append(sol)
        errors.append(float(np.max(np.abs(sol.F - exact))))
        guess = sol.F
    eps_sorted = np.array(sorted(epsilons, reverse=True), dtype=float)
    slope = float(np.polyfit(np.log(eps_sorted), np.log(errors), 1)[0])
    return eps_sorted, np.array(errors), slope, sols
