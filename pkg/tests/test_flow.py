import numpy as np
import pytest
from mpmath import mp, mpf, cosh, log, tanh

from kahlerlab.errors import InvalidArgument, StepRejected
from kahlerlab.flow import (FlowState, dH_dt_identity, fd_slope, krf_step,
                            reference_second_difference, run_krf, tanh_second_difference)
from kahlerlab.metric import SymplecticPotential, legendre_dual


@pytest.fixture(scope="module")
def short_run(perturbed_cp1):
    return run_krf(perturbed_cp1, 1.0, 1e-3, L=12.0, m=4801)


def _mp_second_difference(fun, y, d):
    mp.dps = 40
    return np.array([float((fun(mpf(v) + d) + fun(mpf(v) - d) - 2 * fun(mpf(v))) / mpf(d) ** 2)
                     for v in y])


def test_closed_form_second_differences():
    y = np.linspace(-25, 25, 101)
    d = 0.005
    ex = _mp_second_difference(lambda s: 2 * log(cosh(s / 2)), y, d)
    assert np.max(np.abs(reference_second_difference(y, d) / ex - 1)) < 1e-13
    ex = _mp_second_difference(lambda s: tanh(s / 2), y, d)
    got = tanh_second_difference(y, d)
    assert np.max(np.abs(got - ex) / np.maximum(np.abs(ex), 1e-300)) < 1e-12


def test_initial_state_matches_legendre(perturbed_cp1):
    s = FlowState.from_potential(perturbed_cp1, L=10.0, m=801)
    cp = legendre_dual(perturbed_cp1, 10.0, 801)
    assert np.max(np.abs(s.f - cp.f)) < 1e-12
    assert np.all(s.second_difference() > 0)
    assert s.trace_array().shape == (1, 5)


def _mp_dual(y):
    """Exact Legendre dual of ``u_ref + 0.1 (1 - x^2)`` via ``x = tanh z``."""
    from mpmath import findroot
    z = findroot(lambda z: 2 * z - mpf("0.2") * tanh(z) - y, y / 2)
    x = tanh(z)
    u = (1 + x) * log(1 + x) + (1 - x) * log(1 - x) + mpf("0.1") * (1 - x * x)
    return x * y - u


def test_initial_second_differences_in_far_tails(perturbed_cp1):
    s = FlowState.from_potential(perturbed_cp1, L=24.0, m=9601)
    idx = np.array([1, 2, 3, 50, 1000, 4800])
    ex = _mp_second_difference(_mp_dual, s.y[idx], s.dy)
    rel = s.second_difference()[idx - 1] / ex - 1
    # f'' ~ 6e-11 at the ends, so only relative accuracy is meaningful
    assert np.max(np.abs(rel)) < 1e-7


def test_kahler_einstein_fixed_point(cp1):
    s0 = FlowState.from_potential(SymplecticPotential(cp1), L=12.0, m=4801)
    s = run_krf(s0, 0.1, 1e-3)
    assert len(s.trace) == 101
    disp = s.f - s0.f
    # constant drift only (normalization gauge)
    assert np.ptp(disp) < 1e-6


def test_dt_must_be_positive(perturbed_cp1):
    s = FlowState.from_potential(perturbed_cp1, L=10.0, m=401)
    for dt in (0.0, -1e-3):
        with pytest.raises(InvalidArgument):
            krf_step(s, dt)
    with pytest.raises(InvalidArgument):
        run_krf(s, 1.0, 0.0)
    with pytest.raises(InvalidArgument):
        run_krf(s, 0.0105, 1e-3)
    assert run_krf(s, 0.0, 1e-3) is s


def test_flow_needs_cp1(f1):
    with pytest.raises(InvalidArgument):
        FlowState.from_potential(SymplecticPotential(f1))


def test_single_step_appends_monitors(perturbed_cp1):
    s = FlowState.from_potential(perturbed_cp1, L=10.0, m=801)
    s1 = krf_step(s, 1e-3)
    assert len(s1.trace) == 2 and len(s.trace) == 1
    assert s1.trace[1][1] < s.trace[0][1]
    assert s1.t == pytest.approx(1e-3)


def test_rejected_step_suggests_half(perturbed_cp1):
    s = FlowState.from_potential(perturbed_cp1, L=10.0, m=401)
    bad = FlowState(s.model, s.y, s.w.copy(), s.pins, s.tails)
    bad.w[200] += 1.0  # destroys convexity
    with pytest.raises(StepRejected) as info:
        krf_step(bad, 1e-3)
    assert info.value.suggested_dt == pytest.approx(5e-4)


def test_h_strictly_decreasing(short_run):
    H = short_run.trace_array()[:, 1]
    assert np.all(np.diff(H) < 0)


def test_identity_matches_fd(short_run):
    tr = short_run.trace_array()
    k = 500
    fd = fd_slope(tr, 0.5)
    assert abs(fd - tr[k, 4]) < 1e-2 * abs(tr[k, 4])
    with pytest.raises(InvalidArgument):
        fd_slope(tr, 0.0)


def test_identity_symplectic_side(cp1, perturbed_cp1):
    assert abs(dH_dt_identity(SymplecticPotential(cp1))) < 1e-8
    val = dH_dt_identity(perturbed_cp1)
    assert val <= 1e-8
    # agrees with the grid form at t = 0 up to discretization
    s = FlowState.from_potential(perturbed_cp1)
    assert abs(dH_dt_identity(s) - val) < 2e-3 * abs(val)
    with pytest.raises(InvalidArgument):
        dH_dt_identity(3.0)


def test_normalization_each_step(short_run):
    s = short_run
    q = s.second_difference()
    f = s.f[1:-1]
    h = s.c_of_t - f - np.log(q)
    # discrete int e^h omega = V
    V = s.C1 * s.dy * np.sum(q)
    assert abs(s.C1 * s.dy * np.sum(np.exp(h) * q) - V) < 1e-12 * V
