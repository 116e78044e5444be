import numpy as np
import pytest

from rsrlab.graph import load_graph


def path_graph(n):
    return load_graph([(i, i + 1) for i in range(n - 1)], n)


def cycle_graph(n):
    return load_graph([(i, (i + 1) % n) for i in range(n)], n)


def grid_graph(rows, cols):
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.append((k, k + 1))
            if r + 1 < rows:
                edges.append((k, k + cols))
    return load_graph(edges, rows * cols)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES = {}


def record(number, status, detail):
    line = f"criterion {number:>2}: {status:<7} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
