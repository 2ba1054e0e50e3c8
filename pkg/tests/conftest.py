import numpy as np
import pytest

from spectra.graph import SignedDiGraph


def random_signed_digraph(rng, n, density, directed=True):
    """Each ordered (or unordered) pair is an edge with prob `density`, sign uniform."""
    if directed:
        mask = rng.random((n, n)) < density
        np.fill_diagonal(mask, False)
    else:
        mask = np.triu(rng.random((n, n)) < density, k=1)
    u, v = np.nonzero(mask)
    s = rng.choice([-1.0, 1.0], size=len(u))
    return SignedDiGraph(n, u, v, s, directed=directed)


def dense_adjacency(g):
    a = np.zeros((g.n_nodes, g.n_nodes))
    for u, v, s in g.edges:
        a[u, v] = s
        if not g.directed:
            a[v, u] = s
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def undirected(n, edges):
    return SignedDiGraph.from_edges(n, edges, directed=False)


def directed(n, edges):
    return SignedDiGraph.from_edges(n, edges, directed=True)


ACCEPTANCE = []


def record(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
