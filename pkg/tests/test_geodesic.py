import json

import numpy as np
import pytest

from kahlerlab.errors import ConvergenceFailure, DegenerateMetricError, InvalidArgument
from kahlerlab.functionals import f_derivative_along, h_functional
from kahlerlab.geodesic import (ON_CATALOG_NOTE, EpsGeodesicProblem, GeodesicPath,
                                default_ray_catalog, dh_dt_identity, eps_geodesic_solve,
                                exact_toric_geodesic, h_of_t, load_ray_catalog, path_trace,
                                ray_direction, ray_from_entry, stability_probe)
from kahlerlab.invariants import h_invariant
from kahlerlab.metric import SymplecticPotential, legendre_dual
from kahlerlab.terms import PolynomialTerm, RampTerm


def affine(xi):
    return {"type": "affine", "params": {"xi": list(xi)}}


@pytest.mark.parametrize("entry", [
    {"params": {}},
    {"type": "spiral", "params": {}},
    {"type": "affine", "params": {"xi": [1.0], "scale": 2}},
    {"type": "affine", "params": {"xi": [1.0, 2.0]}},
    {"type": "pl", "params": {"a": [1.0], "delta": 0.0}},
    {"type": "poly", "params": {"coefficients": [0.0, 0.0, -1.0]}},
    {"type": "affine", "params": {"xi": [1.0]}, "color": "red"},
])
def test_bad_ray_entries(cp1, entry):
    with pytest.raises(InvalidArgument):
        ray_direction(cp1, entry)


def test_load_catalog_sources(tmp_path, cp1):
    cat = default_ray_catalog(cp1)
    p = tmp_path / "rays.json"
    p.write_text(json.dumps(cat))
    assert load_ray_catalog(str(p)) == cat
    assert load_ray_catalog(json.dumps(cat)) == cat
    with pytest.raises(InvalidArgument):
        load_ray_catalog(json.dumps({"type": "affine"}))


def test_segment_domain(cp1):
    u0 = SymplecticPotential(cp1)
    with pytest.raises(InvalidArgument):
        GeodesicPath(u0, PolynomialTerm([0.0, 0.0, -3.0]), "segment")
    path = GeodesicPath(u0, PolynomialTerm([0.0, 0.0, -3.0]), "segment", T=1.0)
    path.check_domain([0.0, 0.1])
    with pytest.raises(DegenerateMetricError):
        path.check_domain([0.5])


@pytest.mark.parametrize("entry", [affine([1.0]), {"type": "pl", "params": {"a": [1.0], "b": 0.2}},
                                   {"type": "poly", "params": {"coefficients": [0, 0.2, 1.0]}}])
def test_phi_dot_is_minus_v(perturbed_cp1, entry):
    path = ray_from_entry(perturbed_cp1, entry)
    assert path.phi_dot_check(np.linspace(-4, 4, 9)) < 1e-6


def test_zero_direction(perturbed_cp1):
    path = GeodesicPath(perturbed_cp1, PolynomialTerm([0.0]))
    assert h_of_t(path, 2.0) == 0.0
    assert dh_dt_identity(path, 1.0) == (0.0, 0.0)


def test_h_monotone_affine_cp1(perturbed_cp1, cp1):
    path = ray_from_entry(perturbed_cp1, affine([1.0]))
    H = [h_of_t(path, t) for t in (0.0, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(H) >= -1e-8 * cp1.V)


def test_h_of_t_below_h_functional(f1):
    # H(t) on an affine ray is H(xi) up to the normalization of theta_xi
    u = SymplecticPotential(f1)
    path = ray_from_entry(u, affine([0.4, -0.3]))
    for t in (0.0, 2.0):
        ut = path.metric_at(t)
        assert h_invariant(ut, [0.4, -0.3]) <= h_functional(ut) + 1e-10


def test_dh_dt_identity_affine(perturbed_cp1, cp1):
    path = ray_from_entry(perturbed_cp1, affine([1.0]))
    fd, rhs = dh_dt_identity(path, 1.0)
    assert abs(fd - rhs) < 1e-4 * max(abs(rhs), cp1.V * 1e-6)
    fd0, rhs0 = dh_dt_identity(path, 0.0)
    assert abs(fd0 - rhs0) < 1e-4 * max(abs(rhs0), cp1.V * 1e-6)


@pytest.mark.parametrize("model_name", ["cp1", "f1"])
def test_poincare_rhs_nonnegative(model_name, request):
    model = request.getfixturevalue(model_name)
    u = SymplecticPotential(model)
    for entry in default_ray_catalog(model):
        path = ray_from_entry(u, entry)
        for t in (0.0, 2.0):
            assert dh_dt_identity(path, t)[1] >= -1e-8 * model.V


def _pl_slopes(u, a, delta, times=(0.0, 2.0, 8.0)):
    path = ray_from_entry(u, {"type": "pl", "params": {"a": a, "b": 0.0, "delta": delta}})
    return np.array([f_derivative_along(path, t)[1] for t in times])


@pytest.mark.xfail(strict=True, reason="slopes move by O(delta): 5.8e-4 at t = 8 for "
                                       "delta = 1e-2 -> 5e-3, above the 1e-4 target")
def test_fillet_width_stability_default_delta(f1):
    u = SymplecticPotential(f1)
    gap = np.abs(_pl_slopes(u, [1.0, 0.0], 1e-2) - _pl_slopes(u, [1.0, 0.0], 5e-3))
    assert np.max(gap) < 1e-4


def test_fillet_width_first_order(f1):
    u = SymplecticPotential(f1)
    s = [_pl_slopes(u, [1.0, 0.0], d) for d in (2e-2, 1e-2, 5e-3)]
    g1, g2 = np.max(np.abs(s[0] - s[1])), np.max(np.abs(s[1] - s[2]))
    assert abs(g1 / g2 - 2.0) < 0.05
    # signs of the probe slopes do not depend on delta
    assert np.array_equal(np.sign(s[0]), np.sign(s[2]))
    fine = np.abs(_pl_slopes(u, [1.0, 0.0], 1e-3) - _pl_slopes(u, [1.0, 0.0], 5e-4))
    assert np.max(fine) < 1e-4


def test_stability_cp1(cp1):
    rep = stability_probe(cp1, SymplecticPotential(cp1))
    assert rep["scope"] == ON_CATALOG_NOTE
    assert rep["F_semistable_on_catalog"]
    assert rep["F_destabilizing_rays"] == []
    assert all(r["first_nonnegative_t"] is not None for r in rep["rays"])


def test_stability_model_mismatch(cp1, f1):
    with pytest.raises(InvalidArgument):
        stability_probe(cp1, SymplecticPotential(f1))


def test_path_trace_columns(perturbed_cp1):
    path = ray_from_entry(perturbed_cp1, affine([1.0]))
    rows = path_trace(path, [0.0, 1.0], X=[0.0])
    assert len(rows) == 2 and all(len(r) == 5 for r in rows)
    assert rows[0][2] == 0.0
    assert abs(rows[1][3] - rows[1][4]) < 1e-12  # X = 0 reduces F_X to F
    assert np.isnan(path_trace(path, [0.0])[0][4])


# -- epsilon geodesics on a small mesh ----------------------------------------

@pytest.fixture(scope="module")
def small_duals(cp1):
    u0 = SymplecticPotential(cp1)
    u1 = SymplecticPotential(cp1, RampTerm([1.0], 0.0, 0.1))
    return u0, u1, legendre_dual(u0, 6.0, 121), legendre_dual(u1, 6.0, 121)


def test_eps_problem_validation(small_duals, cp1):
    _, _, f0, f1 = small_duals
    with pytest.raises(InvalidArgument):
        EpsGeodesicProblem(f0, f1, 0.0)
    with pytest.raises(InvalidArgument):
        EpsGeodesicProblem(f0, legendre_dual(SymplecticPotential(cp1), 6.0, 101), 0.1)
    with pytest.raises(InvalidArgument):
        EpsGeodesicProblem(f0, f1, 0.1, T=0.0)


def test_eps_stationary_segment(small_duals):
    _, _, f0, _ = small_duals
    dist = []
    for eps in (1e-1, 1e-2, 1e-3):
        sol = eps_geodesic_solve(EpsGeodesicProblem(f0, f0, eps, nt=10))
        assert sol.residual < 1e-8
        dist.append(np.max(np.abs(sol.F - f0.f[None, :])))
    assert dist[0] > dist[1] > dist[2]


def test_eps_solution_satisfies_equation(small_duals):
    u0, u1, f0, f1 = small_duals
    prob = EpsGeodesicProblem(f0, f1, 1e-2, nt=10)
    exact, _ = exact_toric_geodesic(u0, u1, 1.0, prob.t, 6.0, 121)
    sol = eps_geodesic_solve(prob, initial=exact)
    F, dt, dy = sol.F, prob.t[1], prob.y[1] - prob.y[0]
    Ftt = (F[2:, 1:-1] - 2 * F[1:-1, 1:-1] + F[:-2, 1:-1]) / dt**2
    Fyy = (F[1:-1, 2:] - 2 * F[1:-1, 1:-1] + F[1:-1, :-2]) / dy**2
    Fty = (F[2:, 2:] - F[2:, :-2] - F[:-2, 2:] + F[:-2, :-2]) / (4 * dt * dy)
    assert np.max(np.abs(Ftt * Fyy - Fty**2 - 1e-2 * prob.ref[None, 1:-1])) < 1e-8
    assert np.min(Fyy) > 0
    assert np.array_equal(F[0], f0.f) and np.array_equal(F[-1], f1.f)


def test_eps_newton_failure_reports_residual(small_duals):
    _, _, f0, f1 = small_duals
    with pytest.raises(ConvergenceFailure) as info:
        eps_geodesic_solve(EpsGeodesicProblem(f0, f1, 1e-3, nt=10), maxiter=1)
    assert info.value.residual > 0 and info.value.best is not None
