import pytest

from kahlerlab.metric import SymplecticPotential, get_model
from kahlerlab.terms import make_psi


@pytest.fixture(scope="session")
def cp1():
    return get_model("CP1")


@pytest.fixture(scope="session")
def f1():
    return get_model("Hirzebruch1")


@pytest.fixture(scope="session")
def perturbed_cp1(cp1):
    """The standard perturbed start ``psi = 0.1 (1 - x^2)``."""
    return SymplecticPotential(cp1, make_psi(cp1.polytope, "poly", [0.1, 0.0, -0.1]))


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line acceptance verdict; lines are echoed at the end of
    the run and also printed immediately."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
