
import numpy as np
import pytest

from anovacheb.core import GroupedIndexSet, NodeSet, build_superposition_term_set

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_index_set(d, ds, n_by_order):
    return GroupedIndexSet.with_order_bandlimits(build_superposition_term_set(d, ds), n_by_order)


def random_cheb_nodes(rng, M, d):
    return NodeSet(np.cos(np.pi * rng.random((M, d))))


@pytest.fixture
def small_index_set():
    return random_index_set(3, 2, (6, 4))
