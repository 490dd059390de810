import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from beliefnet.model import PairwiseMRF, random_graph, random_tree

TWO_NODE = PairwiseMRF([[1.0, 1.0], [1.0, 1.0]], [(0, 1, [[2.0, 1.0], [1.0, 2.0]])])


@pytest.fixture
def two_node():
    return TWO_NODE


@st.composite
def trees(draw, max_nodes=7, card=(2, 3)):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), max_nodes=max_nodes, card=card)


@st.composite
def graphs(draw, max_nodes=5, card=(2, 3)):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_nodes + 1))
    return random_graph(rng, n, 0.6, card)


@st.composite
def simplex(draw, n):
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    w = np.asarray(w)
    return w / w.sum()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
