import numpy as np
import pytest

from vcopula.dataset import PUBLISHED_HOT_COUNTS, derive_cooccurrence, generate_population
from vcopula.fixtures import published_marginals, published_pair_counts, published_params as load_published_params

POPULATION_SEED = 7


@pytest.fixture(scope="session")
def published_params():
    return load_published_params()


@pytest.fixture(scope="session")
def population(published_params):
    marginals = published_marginals()
    cooc = derive_cooccurrence(marginals, published_pair_counts())
    return generate_population(
        marginals,
        cooc,
        seed=POPULATION_SEED,
        hot_counts=PUBLISHED_HOT_COUNTS,
        feasible_under=published_params,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


CRITERIA_LINES = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        CRITERIA_LINES[number] = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} -- {detail}"
        assert ok, CRITERIA_LINES[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[key])
