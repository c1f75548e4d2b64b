import numpy as np
import pytest

from sealtw.hierarchy import HierarchySpec, balanced_tree, random_tree, star_tree


@pytest.fixture
def binary():
    # root, v1, v2; l1, l2 under v1 and l3, l4 under v2
    return balanced_tree(3, 4)


@pytest.fixture
def star():
    return star_tree(2)


@pytest.fixture
def chain():
    return HierarchySpec([[0, 1], [0, 0]], [[0], [1]])


@pytest.fixture
def soft_pair():
    # root with two latent children; l1 split (0.5, 0.5), l2 hard under child 1
    A1 = [[0, 1, 1], [0, 0, 0], [0, 0, 0]]
    A2 = [[0, 0], [0.5, 1], [0.5, 0]]
    return HierarchySpec(A1, A2, soft=True)


def random_soft(rng, max_latent=6, max_observed=8):
    M = int(rng.integers(2, max_latent + 1))
    K = int(rng.integers(2, max_observed + 1))
    return random_tree(M, K, seed=int(rng.integers(2**31)), soft=True, weights="random")


def random_hard(rng, max_latent=6, max_observed=8):
    M = int(rng.integers(1, max_latent + 1))
    K = int(rng.integers(2, max_observed + 1))
    return random_tree(M, K, seed=int(rng.integers(2**31)), weights="random")


def simplex(rng, K, size=None):
    return rng.dirichlet(np.ones(K), size=size)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
