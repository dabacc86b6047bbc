"""Closed-form smooth functions on a polytope with exact derivatives.

Terms back both metric perturbations ``psi`` and geodesic directions ``v``.
``derivatives(x, order)`` returns ``[value, grad, hess, d3, d4][:order + 1]``
with shapes ``(N,)``, ``(N, n)``, ``(N, n, n)`` and so on.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import InvalidArgument


def _as_points(x, dim):
    return np.asarray(x, dtype=float).reshape(-1, dim)


class Term:
    dim: int = 1

    def derivatives(self, x, order=2):
        raise NotImplementedError

    def __call__(self, x):
        return self.derivatives(x, 0)[0]

    @property
    def cuts(self):
        """Lines across which the term is only piecewise smooth."""
        return ()

    def __add__(self, other):
        return SumTerm([self, other])

    def __mul__(self, scale):
        return SumTerm([self], [float(scale)])

    __rmul__ = __mul__

    def to_dict(self):
        raise NotImplementedError


class ZeroTerm(Term):
    def __init__(self, dim):
        self.dim = dim

    def derivatives(self, x, order=2):
        x = _as_points(x, self.dim)
        N, n = x.shape
        return [np.zeros((N,) + (n,) * k) for k in range(order + 1)]

    def to_dict(self):
        return {"type": "zero", "dim": self.dim}


class PolynomialTerm(Term):
    """Polynomial in monomial basis: ``coeffs[i]`` or ``coeffs[i, j]`` for
    ``x**i`` / ``x1**i * x2**j``."""

    def __init__(self, coeffs, dim=None):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if dim is None:
            dim = c.ndim
        if c.ndim != dim or dim not in (1, 2):
            raise InvalidArgument("coefficient array rank must equal dim (1 or 2)")
        self.dim = dim
        self.coeffs = c
        self._cache = {}

    def _deriv_coeffs(self, multi):
        key = tuple(multi)
        if key not in self._cache:
            c = self.coeffs
            for axis, k in enumerate(multi):
                if k:
                    c = npoly.polyder(c, k, axis=axis)
            self._cache[key] = c
        return self._cache[key]

    def _eval(self, x, multi):
        c = self._deriv_coeffs(multi)
        if self.dim == 1:
            return npoly.polyval(x[:, 0], c)
        return npoly.polyval2d(x[:, 0], x[:, 1], c)

    def derivatives(self, x, order=2):
        x = _as_points(x, self.dim)
        N, n = x.shape
        out = []
        for k in range(order + 1):
            arr = np.empty((N,) + (n,) * k)
            for idx in np.ndindex(*((n,) * k)):
                multi = np.bincount(np.asarray(idx, dtype=int), minlength=n)
                arr[(slice(None),) + idx] = self._eval(x, multi)
            out.append(arr)
        return out

    def to_dict(self):
        return {"type": "poly", "coefficients": self.coeffs.tolist()}


def _fillet(s, delta, order):
    """C^2 fillet of ``max(0, s)`` on ``|s| <= delta`` and derivatives."""
    sig = np.clip(s / delta, -1.0, 1.0)
    inside = np.abs(s) < delta
    above = s >= delta
    vals = [
        np.where(above, s, np.where(inside, 0.25 * delta * (-sig**4 / 4 + 1.5 * sig**2 + 2 * sig + 0.75), 0.0)),
        np.where(above, 1.0, np.where(inside, 0.25 * (-sig**3 + 3 * sig + 2), 0.0)),
        np.where(inside, 0.75 / delta * (1 - sig**2), 0.0),
        np.where(inside, -1.5 * sig / delta**2, 0.0),
        np.where(inside, -1.5 / delta**3, 0.0),
    ]
    return vals[: order + 1]


class RampTerm(Term):
    """``max(0, <a,x> + b)`` with a convex C^2 fillet of half-width ``delta``.

    ``delta = 0`` keeps the exact kink (first derivatives only).
    """

    def __init__(self, a, b, delta=1e-2):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.dim = self.a.size
        self.b = float(b)
        self.delta = float(delta)
        if self.delta < 0:
            raise InvalidArgument("fillet width must be nonnegative")

    def derivatives(self, x, order=2):
        x = _as_points(x, self.dim)
        s = x @ self.a + self.b
        if self.delta == 0:
            ps = [np.maximum(s, 0.0), (s > 0).astype(float)] + [np.zeros_like(s)] * 3
        else:
            ps = _fillet(s, self.delta, order)
        out = []
        for k in range(order + 1):
            t = ps[k]
            for _ in range(k):
                t = t[..., None] * self.a
            out.append(t)
        return out

    @property
    def cuts(self):
        if self.delta == 0:
            return ((tuple(self.a), self.b),)
        return ((tuple(self.a), self.b - self.delta), (tuple(self.a), self.b + self.delta))

    def to_dict(self):
        return {"type": "pl", "a": self.a.tolist(), "b": self.b, "delta": self.delta}


class AffineTerm(Term):
    def __init__(self, xi, c=0.0):
        self.xi = np.atleast_1d(np.asarray(xi, dtype=float))
        self.dim = self.xi.size
        self.c = float(c)

    def derivatives(self, x, order=2):
        x = _as_points(x, self.dim)
        N, n = x.shape
        out = [x @ self.xi + self.c, np.broadcast_to(self.xi, (N, n)).copy()]
        out += [np.zeros((N,) + (n,) * k) for k in range(2, order + 1)]
        return out[: order + 1]

    def to_dict(self):
        return {"type": "affine", "xi": self.xi.tolist(), "c": self.c}


class SumTerm(Term):
    def __init__(self, terms, scales=None):
        flat, sc = [], []
        scales = [1.0] * len(terms) if scales is None else list(scales)
        for t, s in zip(terms, scales):
            if isinstance(t, SumTerm):
                flat.extend(t.terms)
                sc.extend(s * q for q in t.scales)
            else:
                flat.append(t)
                sc.append(s)
        dims = {t.dim for t in flat}
        if len(dims) != 1:
            raise InvalidArgument("cannot add terms of different dimension")
        self.terms, self.scales = flat, sc
        self.dim = dims.pop()

    def derivatives(self, x, order=2):
        acc = None
        for t, s in zip(self.terms, self.scales):
            if s == 0.0:
                continue
            d = t.derivatives(x, order)
            acc = [s * a for a in d] if acc is None else [p + s * a for p, a in zip(acc, d)]
        if acc is None:
            return ZeroTerm(self.dim).derivatives(x, order)
        return acc

    @property
    def cuts(self):
        seen = []
        for t, s in zip(self.terms, self.scales):
            if s != 0.0:
                for c in t.cuts:
                    if c not in seen:
                        seen.append(c)
        return tuple(seen)

    def to_dict(self):
        return {"type": "sum", "terms": [t.to_dict() for t in self.terms], "scales": self.scales}


def slack_product(P):
    """Monomial coefficients of ``prod_k (<x, n_k> + 1)``."""
    if P.dim == 1:
        c = np.array([1.0])
        for (n,) in P.normals:
            c = npoly.polymul(c, [1.0, float(n)])
        return c
    c = np.array([[1.0]])
    for n1, n2 in P.normals:
        f = np.zeros((2, 2))
        f[0, 0], f[1, 0], f[0, 1] = 1.0, n1, n2
        c = _polymul2d(c, f)
    return c


def _polymul2d(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i, j in np.ndindex(*b.shape):
        out[i:i + a.shape[0], j:j + a.shape[1]] += b[i, j] * a
    return out


PSI_CATALOG = ("zero", "poly", "bump")


def make_psi(P, catalog_id="zero", coefficients=None):
    """Build a perturbation from the catalog.

    ``poly``: plain polynomial with the given monomial coefficients.
    ``bump``: the polynomial times the product of all facet functions, so the
    perturbation vanishes on the boundary.
    """
    if catalog_id == "zero":
        return ZeroTerm(P.dim)
    if coefficients is None:
        raise InvalidArgument(f"catalog entry {catalog_id!r} needs coefficients")
    c = np.asarray(coefficients, dtype=float)
    if P.dim == 2 and c.ndim == 1:
        c = c[:, None]
    if catalog_id == "poly":
        return PolynomialTerm(c, P.dim)
    if catalog_id == "bump":
        s = slack_product(P)
        prod = npoly.polymul(c, s) if P.dim == 1 else _polymul2d(c, s)
        return PolynomialTerm(prod, P.dim)
    raise InvalidArgument(f"unknown psi catalog id {catalog_id!r}; choose from {PSI_CATALOG}")


def term_from_dict(d):
    kind = d.get("type")
    if kind == "zero":
        return ZeroTerm(int(d["dim"]))
    if kind == "poly":
        return PolynomialTerm(d["coefficients"])
    if kind == "pl":
        return RampTerm(d["a"], d["b"], d.get("delta", 1e-2))
    if kind == "affine":
        return AffineTerm(d["xi"], d.get("c", 0.0))
    if kind == "sum":
        return SumTerm([term_from_dict(t) for t in d["terms"]], d["scales"])
    raise InvalidArgument(f"unknown term type {kind!r}")
