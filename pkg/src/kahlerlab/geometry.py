"""Moment polytopes of the toric Fano models and quadrature over them.

Every facet is written as ``<x, normal> + 1 >= 0`` (anticanonical gauge), so
the origin is the distinguished interior point used by all invariant formulas.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .errors import InvalidArgument

MODELS = ("CP1", "Hirzebruch1")

#: quadrature order used when callers do not ask for one
DEFAULT_ORDER = {1: 48, 2: 24}


@dataclass(frozen=True, eq=False)
class Polytope:
    """Lattice polytope ``{x : <x, n_k> + 1 >= 0}``.

    Vertices of polygons are stored counter-clockwise.
    """

    dim: int
    normals: np.ndarray
    vertices: np.ndarray
    name: str = ""

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=int))
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, self.dim)
        if self.dim not in (1, 2):
            raise InvalidArgument(f"dim must be 1 or 2, got {self.dim}")
        if normals.shape[1] != self.dim:
            raise InvalidArgument("normals do not match dim")
        normals.setflags(write=False)
        vertices.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "vertices", vertices)

    def slack(self, x):
        """Facet values ``l_k(x) = <x, n_k> + 1``, shape ``(..., n_facets)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return x @ self.normals.T + 1.0

    def contains(self, x, strict=True):
        s = self.slack(x)
        return np.all(s > 0, axis=1) if strict else np.all(s >= 0, axis=1)

    @property
    def volume(self):
        if self.dim == 1:
            return float(self.vertices.max() - self.vertices.min())
        x, y = self.vertices.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def barycenter(self):
        if self.dim == 1:
            return np.array([0.5 * (self.vertices.max() + self.vertices.min())])
        return _polygon_centroid(self.vertices)

    def facet_sum(self):
        """Sum of the facet normals."""
        return self.normals.sum(axis=0).astype(float)

    def to_json(self):
        return json.dumps({
            "dim": self.dim,
            "normals": self.normals.tolist(),
            "vertices": self.vertices.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - {"dim", "normals", "vertices"}
        if unknown:
            raise InvalidArgument(f"unknown polytope keys: {sorted(unknown)}")
        poly = cls(int(data["dim"]), data["normals"], data["vertices"])
        poly.validate()
        return poly

    def validate(self, tol=1e-12):
        """Check the anticanonical normal form; raise on violation."""
        for n in self.normals:
            if np.gcd.reduce(np.abs(n)) != 1:
                raise InvalidArgument(f"normal {n.tolist()} is not primitive")
        s = self.slack(self.vertices)
        if np.any(s < -tol):
            raise InvalidArgument("a vertex violates a facet inequality")
        tight = np.sum(np.abs(s) < 1e-9, axis=1)
        if np.any(tight != self.dim):
            raise InvalidArgument("each vertex must lie on exactly dim facets")
        return self


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    cuts: tuple = field(default=())

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self):
        return len(self.weights)

    def integrate(self, values):
        """Weighted sum over nodes along the first axis (fixed node order)."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))


def build_model(name):
    """Return the moment polytope of a supported toric Fano model."""
    if name == "CP1":
        return Polytope(1, [[1], [-1]], [[-1.0], [1.0]], name="CP1")
    if name == "Hirzebruch1":
        normals = [[1, 0], [0, 1], [-1, 1], [0, -1]]
        vertices = [[-1, -1], [0, -1], [2, 1], [-1, 1]]
        return Polytope(2, normals, vertices, name="Hirzebruch1")
    raise InvalidArgument(f"unsupported model {name!r}; choose from {MODELS}")


def _polygon_centroid(verts):
    x, y = np.asarray(verts, dtype=float).T
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * cross.sum()
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6 * area)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6 * area)
    return np.array([cx, cy])


def _clip(verts, a, b, sign):
    """Part of a convex polygon where ``sign * (<a, x> + b) >= 0``."""
    out = []
    k = len(verts)
    vals = sign * (verts @ a + b)
    for i in range(k):
        p, q = verts[i], verts[(i + 1) % k]
        vp, vq = vals[i], vals[(i + 1) % k]
        if vp >= 0:
            out.append(p)
        if (vp > 0 > vq) or (vp < 0 < vq):
            out.append(p + (vp / (vp - vq)) * (q - p))
    return np.array(out)


def _area(verts):
    if len(verts) < 3:
        return 0.0
    x, y = verts.T
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _pieces(P, cuts):
    """Split P along the lines ``<a, x> + b = 0`` into convex pieces."""
    if P.dim == 1:
        lo, hi = float(P.vertices.min()), float(P.vertices.max())
        pts = {lo, hi}
        for a, b in cuts:
            a = float(np.ravel(a)[0])
            if a != 0:
                r = -float(b) / a
                if lo < r < hi:
                    pts.add(r)
        pts = sorted(pts)
        return [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    pieces = [np.array(P.vertices, dtype=float)]
    for a, b in cuts:
        a = np.asarray(a, dtype=float)
        nxt = []
        for poly in pieces:
            for sign in (1.0, -1.0):
                part = _clip(poly, a, float(b), sign)
                if _area(part) > 1e-14:
                    nxt.append(part)
        pieces = nxt
    return pieces


def _triangle_rule(order):
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1)."""
    z, wz = roots_jacobi(order, 0.0, 1.0)
    s = 0.5 * (1 + z)
    ws = 0.25 * wz
    r, wr = leggauss(order)
    r = 0.5 * (1 + r)
    wr = 0.5 * wr
    S, R = np.meshgrid(s, r, indexing="ij")
    W = np.outer(ws, wr)
    # x = s*(1-r), y = s*r ; Jacobian s is carried by the Jacobi weight
    pts = np.column_stack([(S * (1 - R)).ravel(), (S * R).ravel()])
    return pts, W.ravel()


def quadrature(P, order=None, cuts=()):
    """Interior-node quadrature rule on ``P``.

    Gauss-Legendre with ``order`` nodes on each interval piece; on polygons
    each convex piece is fanned from its centroid and every triangle gets a
    collapsed ``order x order`` Gauss rule (exact to total degree
    ``2*order - 1``). ``cuts`` lists lines ``(a, b)`` with ``<a,x> + b = 0``
    across which integrands may lose smoothness; pieces are integrated
    separately.
    """
    if order is None:
        order = DEFAULT_ORDER[P.dim]
    if int(order) != order or order < 1:
        raise InvalidArgument(f"quadrature order must be >= 1, got {order}")
    order = int(order)
    cuts = tuple((tuple(np.ravel(a).tolist()), float(b)) for a, b in cuts)
    if P.dim == 1:
        g, w = leggauss(order)
        nodes, weights = [], []
        for lo, hi in _pieces(P, cuts):
            half = 0.5 * (hi - lo)
            nodes.append(lo + half * (g + 1))
            weights.append(half * w)
        nodes = np.concatenate(nodes)[:, None]
        weights = np.concatenate(weights)
        return QuadratureRule(nodes, weights, order, cuts)

    ref_pts, ref_w = _triangle_rule(order)
    nodes, weights = [], []
    for poly in _pieces(P, cuts):
        c = _polygon_centroid(poly)
        for i in range(len(poly)):
            p, q = poly[i], poly[(i + 1) % len(poly)]
            J = np.column_stack([p - c, q - c])
            det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
            if det <= 1e-15:
                continue
            nodes.append(c + ref_pts @ J.T)
            weights.append(det * ref_w)
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights), order, cuts)


def polytope_moments(P, b=None, order=None, rule=None):
    """Return ``(int_P e^{<b,x>} dx, int_P x e^{<b,x>} dx)``."""
    if rule is None:
        rule = quadrature(P, order)
    x = rule.nodes
    if b is None:
        b = np.zeros(P.dim)
    b = np.asarray(getattr(b, "components", b), dtype=float).reshape(P.dim)
    e = np.exp(x @ b)
    mass = float(rule.integrate(e))
    first = rule.integrate(e[:, None] * x)
    return mass, first
