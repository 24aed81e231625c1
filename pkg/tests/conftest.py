import numpy as np
import pytest

from excursion_area import LatticePMF, cramer_profile, excursion_law

EXAMPLE = [(-1, 0.5), (0, 0.3), (1, 0.2)]
ZERO_MEAN = [(-1, 0.3), (0, 0.4), (1, 0.3)]

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def pmf():
    return LatticePMF.from_pairs(EXAMPLE)


@pytest.fixture(scope="session")
def pmf0():
    return LatticePMF.from_pairs(ZERO_MEAN)


@pytest.fixture(scope="session")
def profile(pmf):
    return cramer_profile(pmf)


@pytest.fixture(scope="session")
def table(pmf):
    """The desk-scale DP table used by the asymptotic checks."""
    return excursion_law(pmf, 4000)


@pytest.fixture(scope="session")
def small_table(pmf):
    return excursion_law(pmf, 400)


@pytest.fixture(scope="session")
def zero_table(pmf0):
    return excursion_law(pmf0, 4000)


def random_pmf(rng: np.random.Generator) -> LatticePMF:
    """A random aperiodic pmf with negative mean and a positive offset."""
    while True:
        lo = -int(rng.integers(1, 4))
        hi = int(rng.integers(1, 4))
        offsets = np.arange(lo, hi + 1)
        w = rng.uniform(0.05, 1.0, offsets.size)
        w[offsets < 0] *= rng.uniform(2.0, 5.0)
        p = w / w.sum()
        p[-1] = 1.0 - p[:-1].sum()
        cand = LatticePMF(offsets, p)
        if cand.mean < -0.05:
            return cand


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(label: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
