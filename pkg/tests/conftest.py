import numpy as np
import pytest

from metagad.graph import AttributedGraph
from metagad.synthetic import random_graph


@pytest.fixture
def toy_graph():
    # two triangles joined by a bridge, plus an isolated node
    edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)]
    x = np.arange(7 * 3, dtype=float).reshape(7, 3) / 10.0
    return AttributedGraph.from_edges(7, edges, x)


@pytest.fixture
def small_graph():
    return random_graph(40, 6, p=0.15, seed=11)


_LINES = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Log one acceptance verdict line; all lines are repeated in the summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def _record(cid, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {cid} {detail}"
        lines.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
