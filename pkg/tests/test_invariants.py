import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kahlerlab.errors import InvalidArgument
from kahlerlab.functionals import h_functional
from kahlerlab.geometry import quadrature
from kahlerlab.invariants import (TorusVector, beta_vector, extremal_field, futaki,
                                  h_invariant, maximize_h_invariant, modified_futaki,
                                  modified_futaki_relation, solve_barycenter)
from kahlerlab.metric import SymplecticPotential, get_model, metric_catalog, ricci_potential


@pytest.fixture(scope="module")
def f1_catalog(f1):
    return metric_catalog(f1, 5, seed=1)


@pytest.fixture(scope="module")
def f1_field(f1):
    return extremal_field(f1)


def test_hamiltonian_normalization(f1):
    u = SymplecticPotential(f1)
    xi = TorusVector([0.4, -0.9])
    theta = xi.hamiltonian(u.rule, u.P)
    assert abs(u.rule.integrate(np.exp(theta)) - f1.vol) < 1e-12


def test_dimension_mismatch(f1):
    with pytest.raises(InvalidArgument):
        h_invariant(SymplecticPotential(f1), [1.0])


def test_futaki_f1_matches_barycenter(f1):
    # F(xi) = -V <xi, barycenter> with barycenter (1/12, 1/6) from exact triangulation
    u = SymplecticPotential(f1)
    V = f1.V
    for xi, expected in (([1.0, 0.0], -V / 12), ([0.0, 1.0], -V / 6)):
        fm, fg = futaki(u, xi)
        assert abs(fm - expected) < 1e-10 * V
        assert abs(fm - fg) < 1e-5 * abs(fm)


def test_futaki_shift_invariance(f1):
    u = SymplecticPotential(f1)
    assert abs(futaki(u, [1.0, 0.3])[0] - futaki(u, [1.0, 0.3], shift=2.5)[0]) < 1e-10


def test_futaki_cp1_vanishes(cp1):
    u = SymplecticPotential(cp1)
    fm, fg = futaki(u, [1.0])
    assert abs(fm) < 1e-8 * cp1.V and abs(fg) < 1e-8 * cp1.V


def test_beta_vanishes_and_is_metric_independent(f1, f1_catalog):
    for u in f1_catalog:
        beta, delta = beta_vector(f1, u)
        assert np.max(np.abs(beta)) < 1e-12
        assert delta < 1e-12


def test_invariants_metric_independent(f1, f1_catalog, f1_field):
    xi = [0.3, -0.2]
    H = [h_invariant(u, xi) for u in f1_catalog]
    F = [futaki(u, xi)[0] for u in f1_catalog]
    FX = [modified_futaki(u, xi, f1_field.xi0) for u in f1_catalog]
    for vals in (H, F, FX):
        assert np.ptp(vals) < 1e-6 * max(1.0, np.max(np.abs(vals)))


def test_extremal_routes(f1_field, f1):
    assert f1_field.route_gap < 1e-6
    assert abs(f1_field.xi0.array[0]) < 1e-8
    assert f1_field.xi0.array[1] < 0
    for e in np.eye(2):
        assert abs(modified_futaki(SymplecticPotential(f1), e, f1_field.xi0)) < 1e-5 * f1.V


def test_extremal_cp1_is_zero(cp1):
    field = extremal_field(cp1)
    assert np.max(np.abs(field.xi0.array)) < 1e-8
    assert abs(field.H_xi0) < 1e-8 * cp1.V


def test_modified_futaki_relation(f1, f1_field):
    u = SymplecticPotential(f1)
    for xi in ([1.0, 0.0], [0.2, 0.7]):
        assert abs(modified_futaki(u, xi, f1_field.xi0)
                   - modified_futaki_relation(u, xi, f1_field.xi0)) < 1e-10 * f1.V


def test_modified_futaki_with_zero_field_is_futaki(f1):
    u = SymplecticPotential(f1)
    assert abs(modified_futaki(u, [1.0, 2.0], [0.0, 0.0]) - futaki(u, [1.0, 2.0])[0]) < 1e-10


def test_h_maximum(f1, f1_field):
    u = SymplecticPotential(f1)
    H0 = f1_field.H_xi0
    rng = np.random.default_rng(3)
    for _ in range(10):
        xi = f1_field.xi0.array + rng.normal(scale=0.3, size=2)
        assert h_invariant(u, xi) <= H0 + 1e-10


def test_solve_barycenter_recovers_field(f1):
    rule = quadrature(f1.polytope, 24)
    xi = np.array([0.7, -1.3])
    e = np.exp(rule.nodes @ xi)
    target = rule.integrate(e[:, None] * rule.nodes) / rule.integrate(e)
    found, _ = solve_barycenter(rule, target)
    assert np.max(np.abs(found - xi)) < 1e-10


def test_optimizer_route_on_cp1(cp1):
    xi, _ = maximize_h_invariant(SymplecticPotential(cp1))
    assert np.max(np.abs(xi)) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_h_invariant_bounded_by_h_functional(a, b):
    # int (h - theta) e^h >= 0 for any normalized Hamiltonian theta
    f1 = get_model("Hirzebruch1")
    u = SymplecticPotential(f1)
    assert h_invariant(u, [a, b]) <= h_functional(u) + 1e-10 * f1.V


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.1, 0.9))
def test_h_invariant_concave(a, b, s):
    f1 = get_model("Hirzebruch1")
    u = SymplecticPotential(f1)
    p, q = np.array([a, b]), np.array([b, -a])
    mid = h_invariant(u, s * p + (1 - s) * q)
    assert mid >= s * h_invariant(u, p) + (1 - s) * h_invariant(u, q) - 1e-10
