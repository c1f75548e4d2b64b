import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from sealtw.hierarchy import HierarchySpec, ModeError, balanced_tree, random_tree, tree_metric
from sealtw.transport import (InfeasibleMarginals, enumerate_transport_vertices,
                              lp_wasserstein_oracle, negdef_check, oracle_agreement,
                              pairwise_rtw, quadratic_form, relaxed_tree_wasserstein, rtw_knn,
                              tree_wasserstein)

from conftest import random_hard, random_soft


def test_tw_examples(binary, star):
    assert tree_wasserstein(star, [1, 0], [0, 1]) == 2.0
    assert tree_wasserstein(binary, [1, 0, 0, 0], [0, 0, 1, 0]) == 4.0
    assert tree_wasserstein(binary, [0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4]) == 0.0


def test_tw_rejects_soft(soft_pair):
    with pytest.raises(ModeError):
        tree_wasserstein(soft_pair, [1, 0], [0, 1])


def test_rtw_examples(binary, soft_pair):
    assert relaxed_tree_wasserstein(binary, [1, 0, 0, 0], [0, 1, 0, 0]) == 2.0
    assert tree_wasserstein(binary, [1, 0, 0, 0], [0, 1, 0, 0]) == 2.0
    # latent terms 0.5 + 0.5, leaf terms 1 + 1
    assert relaxed_tree_wasserstein(soft_pair, [1, 0], [0, 1]) == pytest.approx(3.0, abs=1e-15)
    assert relaxed_tree_wasserstein(soft_pair, [0.3, 0.7], [0.3, 0.7]) == 0.0


def _scipy_ot(C, a, b):
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A_eq[n + j, j::m] = 1
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs")
    return res.fun


def test_lp_examples():
    assert lp_wasserstein_oracle(np.ones((3, 3)) - np.eye(3), [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]).cost == 0.0
    res = lp_wasserstein_oracle([[0, 1], [1, 0]], [1, 0], [0, 1])
    assert res.cost == 1.0
    np.testing.assert_array_equal(res.plan, [[0, 1], [0, 0]])


def test_lp_seed_42_frozen():
    rng = np.random.default_rng(42)
    C = rng.uniform(0, 1, (3, 3))
    mu = rng.dirichlet(np.ones(3))
    nu = rng.dirichlet(np.ones(3))
    expected = 0.485184986850354  # frozen: vertex enumeration and HiGHS agree
    res = lp_wasserstein_oracle(C, mu, nu)
    assert res.cost == pytest.approx(expected, abs=1e-12)
    assert enumerate_transport_vertices(C, mu, nu) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(res.plan.sum(axis=1), mu, atol=1e-12)
    np.testing.assert_allclose(res.plan.sum(axis=0), nu, atol=1e-12)
    assert res.cost == pytest.approx(float(np.sum(res.plan * C)), abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_lp_matches_highs(n, m, seed):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 5, (n, m))
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(m))
    # degenerate marginals exercise Bland's rule
    if n > 1 and rng.random() < 0.3:
        a = np.round(a, 1)
        a[-1] = 1 - a[:-1].sum()
        if a[-1] < 0:
            a = np.full(n, 1 / n)
    assert lp_wasserstein_oracle(C, a, b).cost == pytest.approx(_scipy_ot(C, a, b), abs=1e-9)


def test_lp_errors():
    with pytest.raises(InfeasibleMarginals):
        lp_wasserstein_oracle(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.6])
    with pytest.raises(ValueError):
        lp_wasserstein_oracle(np.zeros((65, 1)), np.full(65, 1 / 65), [1.0])


def test_oracle_agreement_small():
    report = oracle_agreement(trees=30, seed=5)
    assert report["passed"] and report["max_discrepancy"] <= 1e-9


def test_tw_matches_lp_on_binary(binary):
    C = tree_metric(binary)[3:, 3:]
    for mu, nu in [([1, 0, 0, 0], [0, 0, 1, 0]), ([0.25] * 4, [0.7, 0.1, 0.1, 0.1])]:
        assert lp_wasserstein_oracle(C, mu, nu).cost == pytest.approx(
            tree_wasserstein(binary, mu, nu), abs=1e-12)


def test_rtw_degenerates_to_tw():
    rng = np.random.default_rng(7)
    for _ in range(50):
        spec = random_hard(rng)
        mu, nu = rng.dirichlet(np.ones(spec.num_observed), size=2)
        assert abs(relaxed_tree_wasserstein(spec, mu, nu) - tree_wasserstein(spec, mu, nu)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rtw_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    spec = random_soft(rng)
    a, b, c = rng.dirichlet(np.ones(spec.num_observed), size=3)
    ab = relaxed_tree_wasserstein(spec, a, b)
    assert ab == relaxed_tree_wasserstein(spec, b, a)
    assert relaxed_tree_wasserstein(spec, a, a) == 0.0
    assert relaxed_tree_wasserstein(spec, a, c) <= ab + relaxed_tree_wasserstein(spec, b, c) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rtw_identity_of_indiscernibles(seed):
    rng = np.random.default_rng(seed)
    spec = random_soft(rng)  # weights drawn from U(0.1, 2), strictly positive
    a, b = rng.dirichlet(np.ones(spec.num_observed), size=2)
    # the leaf block of the extension is the identity, so RTW >= min w * |a - b|_1
    d = relaxed_tree_wasserstein(spec, a, b)
    assert d >= spec.weights[spec.num_latent:].min() * np.abs(a - b).sum() - 1e-12


def test_pairwise_matches_scalar():
    rng = np.random.default_rng(8)
    spec = random_soft(rng)
    X = rng.dirichlet(np.ones(spec.num_observed), size=5)
    Y = rng.dirichlet(np.ones(spec.num_observed), size=3)
    G = pairwise_rtw(spec, X, Y)
    for i in range(5):
        for j in range(3):
            assert G[i, j] == pytest.approx(relaxed_tree_wasserstein(spec, X[i], Y[j]), abs=1e-14)


def test_negdef_examples(binary):
    rng = np.random.default_rng(9)
    X = rng.dirichlet(np.ones(4), size=2)
    G = pairwise_rtw(binary, X)
    assert quadratic_form(G, [1, -1]) == pytest.approx(-2 * relaxed_tree_wasserstein(binary, *X))
    same = np.tile([0.1, 0.2, 0.3, 0.4], (5, 1))
    rep = negdef_check(binary, same, trials=50)
    assert rep.max_value == 0.0 and rep.passed
    rep = negdef_check(binary, rng.dirichlet(np.ones(4), size=16), trials=1000)
    assert rep.passed and rep.max_value <= 0
    with pytest.raises(ValueError):
        negdef_check(binary, X[:1])


def test_negdef_soft_specs():
    rng = np.random.default_rng(10)
    for _ in range(5):
        spec = random_soft(rng)
        rep = negdef_check(spec, rng.dirichlet(np.ones(spec.num_observed), size=16), seed=1)
        assert rep.passed


def test_knn_examples(binary):
    train = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    assert rtw_knn(binary, train, [3, 1], [0, 1, 0, 0], 1) == 1
    # two equidistant votes: smallest label wins
    assert rtw_knn(binary, train, [3, 1], [1, 0, 0, 0], 2) == 1
    # distance tie: the earlier training vector wins
    assert rtw_knn(binary, train, [5, 2], [0.5, 0.5, 0, 0], 1) == 5
    with pytest.raises(ValueError):
        rtw_knn(binary, np.zeros((0, 4)), [], [1, 0, 0, 0], 1)
    with pytest.raises(ValueError):
        rtw_knn(binary, train, [0, 1], [1, 0, 0, 0], 3)


def test_knn_prototypes(binary):
    # four classes; classes (0, 1) share latent v1 and (2, 3) share v2
    rng = np.random.default_rng(11)
    protos = 0.7 * np.eye(4) + 0.075
    queries = 0.8 * rng.dirichlet(np.ones(4), size=40) + 0.2 * protos[rng.integers(0, 4, 40)]
    pred = rtw_knn(binary, protos, np.arange(4), queries, 1)
    for q, p in zip(queries, pred):
        dists = [relaxed_tree_wasserstein(binary, q, x) for x in protos]
        assert p == int(np.argmin(dists))


def test_knn_batch_vs_single(binary):
    rng = np.random.default_rng(12)
    X = rng.dirichlet(np.ones(4), size=20)
    y = rng.integers(0, 3, 20)
    Q = rng.dirichlet(np.ones(4), size=6)
    batch = rtw_knn(binary, X, y, Q, 5)
    assert [rtw_knn(binary, X, y, q, 5) for q in Q] == list(batch)
