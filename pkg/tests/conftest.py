import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def ding_23():
    """Invariant solutions for (p, q) = (2, 3) with up to two nodes, solved once per session."""
    from nodal_bubbles import ding
    sols, missing = ding.find_solutions(2, 3, max_nodes=2)
    return {"solutions": sols, "missing": missing}


@pytest.fixture(scope="session")
def ding_23_one_node(ding_23):
    return [s for s in ding_23["solutions"] if s.nodes == 1][0]


@pytest.fixture(scope="session")
def ding_profile(ding_23_one_node):
    from nodal_bubbles.ding import pullback
    return pullback(ding_23_one_node)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
