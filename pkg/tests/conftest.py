import numpy as np
import pytest

from tic import AffinePolicy, CoefficientSet, PsiSpec


@pytest.fixture
def unit_mv():
    """dX = u dt + u dW, gamma = 1, candidate u = 1 on [0, 1]."""
    coeffs = CoefficientSet.constant(1.0, B=1.0, D=1.0)
    return coeffs, AffinePolicy.constant(1.0, 1.0), PsiSpec.mean_variance(1.0)


@pytest.fixture
def market():
    """Constant-parameter mean-variance market used throughout."""
    return CoefficientSet.constant(1.0, A=0.05, B=0.4, C=0.0, D=0.2, F=0.0)


@pytest.fixture
def brownian():
    return CoefficientSet.constant(1.0, F=1.0)


@pytest.fixture
def ou():
    return CoefficientSet.constant(1.0, A=-1.0, F=1.0)


@pytest.fixture
def zero_policy():
    return AffinePolicy.constant(1.0, 0.0)


@pytest.fixture
def x_grid():
    return np.linspace(-2.0, 2.0, 9)


_ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the summary."""

    def record(number, title, ok, detail=""):
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
