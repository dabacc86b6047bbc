"""Scalar functionals of invariant metrics and of geodesic paths.

Along a path ``u_t = u_0 + t v`` the Kähler potential moves with
``dphi/dt = -v`` in moment coordinates. The measure ``e^{h_0 - phi_t} omega_0^n``
is the Legendre pullback ``e^{-f_t} dy``, which in moment coordinates reads
``exp(log det D^2u_t - <x, Du_t> + u_t) dx`` (see
:attr:`SymplecticPotential.log_density`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .invariants import as_vector
from .metric import (SymplecticPotential, _log_integral_exp, get_model, grad_pairing,
                     ricci_gradient, ricci_potential)

FUNCTIONAL_NAMES = ("H", "E0", "F", "FX", "W", "MU_BOUND")


@dataclass
class FunctionalReport:
    name: str
    value: float
    normalization_constants: dict = field(default_factory=dict)
    quadrature_order: int = 0
    refinement_delta: float = float("nan")

    @property
    def converged(self):
        return bool(self.refinement_delta < 1e-8 * max(1.0, abs(self.value)))

    def to_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "normalization_constants": self.normalization_constants,
            "quadrature_order": self.quadrature_order,
            "refinement_delta": self.refinement_delta,
            "converged": self.converged,
        }


def h_functional(u):
    """``int h e^h omega^n``; nonnegative by Jensen."""
    h = ricci_potential(u).h
    return u.model.C_n * float(u.rule.integrate(h * np.exp(h)))


def w_and_mu_bound(u):
    """``(W(omega, -h), n V - H(omega))`` computed independently.

    ``W`` is integrated directly from ``n + Lap h + |grad h|^2 - h`` using the
    third and fourth derivatives of ``u``.
    """
    rp = ricci_potential(u)
    grad, lap = ricci_gradient(u, with_laplacian=True)
    norm2 = grad_pairing(grad, grad, u)
    n, Cn = u.model.n, u.model.C_n
    W = Cn * float(u.rule.integrate((n + lap + norm2 - rp.h) * np.exp(rp.h)))
    return W, n * u.model.V - h_functional(u)


def _refined(u):
    order = 2 * u.rule.order
    model = get_model(u.model.name, order)
    return SymplecticPotential(model, u.psi)


def functional_report(name, u, **kwargs):
    """Evaluate a metric functional and its change under doubled order."""
    fns = {
        "H": lambda w: h_functional(w),
        "W": lambda w: w_and_mu_bound(w)[0],
        "MU_BOUND": lambda w: w_and_mu_bound(w)[1],
    }
    if name not in fns:
        raise KeyError(f"no metric-level report for {name!r}")
    value = fns[name](u)
    fine = fns[name](_refined(u))
    return FunctionalReport(name, value, {"c": ricci_potential(u).c},
                            u.rule.order, abs(fine - value))


# -- path functionals ---------------------------------------------------------

def _path_data(path, t):
    """Node values of ``v`` and the log of the pulled-back measure at ``t``."""
    ut = path.metric_at(t)
    return path.v_nodes, ut.log_density, path.rule


def _weighted_mean(rule, values, logw):
    m = float(np.max(logw))
    w = np.exp(logw - m)
    return float(rule.integrate(values * w)) / float(rule.integrate(w))


def lebesgue_mean(path):
    """``(1/vol) int v dx``: the (constant) derivative of ``E_0``."""
    return float(path.rule.integrate(path.v_nodes)) / path.model.vol


def f_derivative_along(path, t):
    """``(dE0/dt, dF/dt)`` at ``t``.

    ``dE0 = (C_n / V) int v dx`` and ``dF = dE0 - <v>_t`` with ``<v>_t`` the
    mean of ``v`` under the normalized measure ``e^{h_0 - phi_t} omega_0^n``.
    """
    v, logw, rule = _path_data(path, t)
    if not np.any(v):
        return 0.0, 0.0
    dE0 = lebesgue_mean(path)
    return dE0, dE0 - _weighted_mean(rule, v, logw)


def modified_f_derivative_along(path, t, X):
    """Derivative of ``F_X``: ``(1/V) int v e^{theta_X} omega^n - <v>_t``."""
    v, logw, rule = _path_data(path, t)
    if not np.any(v):
        return 0.0
    X = as_vector(X, path.model.n)
    theta_X = X.hamiltonian(rule, path.model.polytope)
    first = float(rule.integrate(v * np.exp(theta_X))) / path.model.vol
    return first - _weighted_mean(rule, v, logw)


def log_partition(path, t):
    """``log int e^{h_0 - phi_t} omega_0^n`` up to a t-independent constant."""
    return _log_integral_exp(path.rule, path.metric_at(t).log_density)


def f_value(path, t):
    """``F(phi_t)`` normalized by ``F(phi_0) = 0``."""
    return t * lebesgue_mean(path) - (log_partition(path, t) - log_partition(path, 0.0))


def f_report(path, t):
    dE0, dF = f_derivative_along(path, t)
    rp = ricci_potential(path.metric_at(t))
    return FunctionalReport("F", f_value(path, t), {"c": rp.c, "dE0": dE0},
                            path.rule.order)


__all__ = [
    "FUNCTIONAL_NAMES", "FunctionalReport", "h_functional", "w_and_mu_bound",
    "functional_report", "lebesgue_mean", "f_derivative_along",
    "modified_f_derivative_along", "f_value", "log_partition", "f_report",
]
