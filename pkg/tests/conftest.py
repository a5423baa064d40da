"""Shared fixtures: the three builtin model pairs."""
import numpy as np
import pytest

from predmetric.models import (LocationScalePairSpec, NormalPairSpec, PoissonPairSpec, builtin_location_scale,
                               builtin_normal, builtin_poisson)


@pytest.fixture(scope="session")
def normal_pair():
    return builtin_normal(NormalPairSpec([[1.0, 0.3], [0.3, 2.0]], [[1.5, -0.2], [-0.2, 0.7]]))


@pytest.fixture(scope="session")
def ls_pair():
    return builtin_location_scale(LocationScalePairSpec())


@pytest.fixture(scope="session")
def poisson_pair():
    return builtin_poisson(PoissonPairSpec((0.5, 1.0, 2.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed in the terminal summary
_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
