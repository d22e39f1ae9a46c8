import numpy as np
import pytest

from circuithmm.graph import augment, build_graph, lattice, lattice_terminals
from circuithmm.transition import TransitionKernel


def chain_graph():
    """Two nodes a-b; with the battery on a and the ground on b this is the series chain."""
    return build_graph([("a", 0.0, 1.0), ("b", 0.0, 0.0)], [("a", "b", 1.0)])


@pytest.fixture
def chain():
    return augment(chain_graph(), ["a"], ["b"])


@pytest.fixture
def chain_kernel():
    return TransitionKernel.from_graph(chain_graph(), ["a"], ["b"])


@pytest.fixture(scope="session")
def lattice_kernel():
    return TransitionKernel.from_graph(lattice(12, 5), *lattice_terminals(12, 5))


@pytest.fixture(scope="session")
def small_kernel():
    return TransitionKernel.from_graph(lattice(3, 2), *lattice_terminals(3, 2))


def random_connected_graph(rng, n, p_extra=0.3, weighted=True):
    """Random spanning tree plus extra edges, with random centroids."""
    ids = [f"n{k}" for k in range(n)]
    edges = {}
    for k in range(1, n):
        j = int(rng.integers(k))
        edges[(j, k)] = 1.0
    for j in range(n):
        for k in range(j + 1, n):
            if (j, k) not in edges and rng.random() < p_extra:
                edges[(j, k)] = 1.0
    if weighted:
        edges = {e: float(rng.uniform(0.2, 3.0)) for e in edges}
    xy = rng.uniform(0, 10, size=(n, 2))
    nodes = [(ids[k], xy[k, 0], xy[k, 1]) for k in range(n)]
    return build_graph(nodes, [(ids[j], ids[k], c) for (j, k), c in edges.items()])


def random_terminals(rng, g):
    perm = rng.permutation(g.n)
    nb = int(rng.integers(1, g.n))
    ng = int(rng.integers(1, g.n - nb + 1))
    ids = g.node_ids
    return [ids[k] for k in perm[:nb]], [ids[k] for k in perm[nb:nb + ng]]


# one line per acceptance criterion, filled in by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
            terminalreporter.write_line(ACCEPTANCE[key])
