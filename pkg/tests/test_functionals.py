import numpy as np
import pytest

from kahlerlab.errors import DegenerateMetricError
from kahlerlab.functionals import (functional_report, f_derivative_along, f_report, f_value,
                                   h_functional, lebesgue_mean, w_and_mu_bound)
from kahlerlab.geodesic import GeodesicPath, ray_from_entry
from kahlerlab.invariants import futaki
from kahlerlab.metric import SymplecticPotential, metric_catalog
from kahlerlab.terms import AffineTerm, PolynomialTerm, make_psi


def test_h_functional_values(cp1, f1, perturbed_cp1):
    assert abs(h_functional(SymplecticPotential(cp1))) < 1e-8 * cp1.V
    assert h_functional(perturbed_cp1) > 0
    assert h_functional(SymplecticPotential(f1)) > 1.0


def test_w_identity(cp1, perturbed_cp1, f1):
    W, bound = w_and_mu_bound(SymplecticPotential(cp1))
    assert abs(W - cp1.V) < 1e-10 and abs(bound - cp1.V) < 1e-10
    W, bound = w_and_mu_bound(perturbed_cp1)
    assert abs(W - bound) < 1e-4 * abs(bound)
    for u in metric_catalog(f1, 3, seed=2):
        W, bound = w_and_mu_bound(u)
        assert abs(W - bound) < 1e-4 * abs(bound)


def test_w_degenerate(cp1):
    u = SymplecticPotential(cp1, make_psi(cp1.polytope, "poly", [0.0, 0.0, -2.0]))
    with pytest.raises(DegenerateMetricError):
        w_and_mu_bound(u)


def test_report_convergence(perturbed_cp1):
    rep = functional_report("H", perturbed_cp1)
    assert rep.converged
    assert rep.quadrature_order == perturbed_cp1.rule.order
    d = rep.to_dict()
    assert d["name"] == "H" and "c" in d["normalization_constants"]
    with pytest.raises(KeyError):
        functional_report("E0", perturbed_cp1)


def test_affine_ray_slope_is_futaki(f1):
    u = SymplecticPotential(f1)
    xi = np.array([1.0, 0.0])
    path = ray_from_entry(u, {"type": "affine", "params": {"xi": xi.tolist()}})
    slope = futaki(u, xi)[0] / f1.V
    for t in (0.0, 1.5, 5.0):
        assert abs(f_derivative_along(path, t)[1] - slope) < 1e-8
    # F is linear along the ray
    assert abs(f_value(path, 3.0) - 3.0 * slope) < 1e-8


def test_e0_derivative_constant(perturbed_cp1):
    v = PolynomialTerm([0.0, 0.3, 0.5])
    path = GeodesicPath(perturbed_cp1, v)
    dE = [f_derivative_along(path, t)[0] for t in (0.0, 1.0, 4.0)]
    assert np.ptp(dE) == 0
    assert abs(dE[0] - lebesgue_mean(path)) == 0
    assert abs(lebesgue_mean(path) - 0.5 / 3) < 1e-13


def test_zero_direction(perturbed_cp1):
    path = GeodesicPath(perturbed_cp1, PolynomialTerm([0.0]))
    assert f_derivative_along(path, 1.0) == (0.0, 0.0)
    assert f_value(path, 2.0) == 0.0


def test_f_report(perturbed_cp1):
    path = GeodesicPath(perturbed_cp1, AffineTerm([1.0]))
    rep = f_report(path, 1.0)
    assert rep.name == "F" and np.isfinite(rep.value)
