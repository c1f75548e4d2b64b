"""Tree-Wasserstein distances, an exact transport LP, and kernel checks."""
from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from ._backend import kernels, num_threads
from .hierarchy import check_prob_vector, random_tree, require_hard, subtree_masses, tree_metric

LP_MAX_SUPPORT = 64
MARGINAL_TOL = 1e-9


class InfeasibleMarginals(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    cost: float
    row_potentials: np.ndarray
    col_potentials: np.ndarray


def tree_wasserstein(spec, mu, nu):
    """Closed-form 1-Wasserstein distance under the tree metric of a hard spec."""
    require_hard(spec)
    a = subtree_masses(spec, mu)
    b = subtree_masses(spec, nu)
    return float(np.sum(spec.weights[1:] * np.abs(a[1:] - b[1:])))


def _lifted(spec):
    # the root row lifts any probability difference to zero, so it is dropped
    return spec.extension[1:], spec.weights[1:]


def relaxed_tree_wasserstein(spec, mu, nu):
    """Relaxed tree-Wasserstein distance: weighted l1 norm of the lifted difference."""
    K = spec.num_observed
    d = check_prob_vector(mu, K) - check_prob_vector(nu, K)
    E, w = _lifted(spec)
    return float(np.sum(w * np.abs(E @ d)))


def lift(spec, X):
    """Map rows of ``X`` (probability vectors) to their non-root total extensions."""
    E, _ = _lifted(spec)
    return np.atleast_2d(np.asarray(X, dtype=np.float64)) @ E.T


def pairwise_rtw(spec, X, Y=None):
    """Matrix of relaxed tree-Wasserstein distances between rows of X and Y."""
    _, w = _lifted(spec)
    LX = np.ascontiguousarray(lift(spec, X))
    LY = LX if Y is None else np.ascontiguousarray(lift(spec, Y))
    return kernels.weighted_l1_cdist(LX, LY, np.ascontiguousarray(w), num_threads())


# -- exact transport LP ----------------------------------------------------

def _check_marginals(cost, mu, nu):
    C = np.asarray(cost, dtype=np.float64)
    a = np.asarray(mu, dtype=np.float64)
    b = np.asarray(nu, dtype=np.float64)
    if C.ndim != 2 or C.shape != (a.size, b.size):
        raise ValueError(f"cost matrix shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if max(C.shape) > LP_MAX_SUPPORT:
        raise ValueError(f"LP oracle supports at most {LP_MAX_SUPPORT} points per side")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost matrix must be finite and nonnegative")
    if np.any(a < 0) or np.any(b < 0):
        raise InfeasibleMarginals("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise InfeasibleMarginals(f"marginal masses differ: {a.sum():.12g} vs {b.sum():.12g}")
    return C, a, b


def _northwest_corner(a, b):
    n, m = len(a), len(b)
    a, b = a.copy(), b.copy()
    plan = np.zeros((n, m))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        plan[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1 or a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return plan, basis


def _tree_adjacency(basis, n, m):
    # rows are nodes 0..n-1, columns n..n+m-1
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    return adj


def _potentials(C, basis, n, m):
    adj = _tree_adjacency(basis, n, m)
    pot = np.full(n + m, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        x = queue.popleft()
        for y in adj[x]:
            if np.isnan(pot[y]):
                i, j = (x, y - n) if x < n else (y, x - n)
                # u_i + v_j = c_ij on basic cells
                pot[y] = C[i, j] - pot[x]
                queue.append(y)
    return pot[:n], pot[n:]


def _tree_path(basis, n, m, start, goal):
    adj = _tree_adjacency(basis, n, m)
    prev = {start: None}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        if x == goal:
            break
        for y in adj[x]:
            if y not in prev:
                prev[y] = x
                queue.append(y)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def transport_simplex(C, a, b, max_iter=None):
    """Transportation simplex with Bland's pivoting rule.

    Returns ``(plan, u, v)`` where ``u, v`` are optimal dual potentials.
    """
    n, m = C.shape
    plan, basis = _northwest_corner(a, b)
    in_basis = np.zeros((n, m), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    max_iter = max_iter or 50 * n * m + 100
    for _ in range(max_iter):
        u, v = _potentials(C, basis, n, m)
        reduced = C - u[:, None] - v[None, :]
        candidates = np.flatnonzero((reduced < -tol) & ~in_basis)
        if candidates.size == 0:
            return plan, u, v
        ei, ej = divmod(int(candidates[0]), m)
        path = _tree_path(basis, n, m, ei, n + ej)
        cells = []
        for x, y in zip(path[:-1], path[1:]):
            cells.append((x, y - n) if x < n else (y, x - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(plan[c] for c in minus)
        leaving = min((c for c in minus if plan[c] == theta), key=lambda c: c[0] * m + c[1])
        for c in minus:
            plan[c] -= theta
        for c in plus:
            plan[c] += theta
        plan[ei, ej] += theta
        plan[leaving] = 0.0
        basis.remove(leaving)
        in_basis[leaving] = False
        basis.append((ei, ej))
        in_basis[ei, ej] = True
    raise RuntimeError("transportation simplex did not converge")


def enumerate_transport_vertices(cost, mu, nu):
    """Minimum cost over every basic feasible solution (small problems only)."""
    C, a, b = _check_marginals(cost, mu, nu)
    n, m = C.shape
    cells = [(i, j) for i in range(n) for j in range(m)]
    best = np.inf
    for subset in itertools.combinations(cells, n + m - 1):
        flows = _tree_flows(subset, a, b, n, m)
        if flows is not None and all(f >= -1e-12 for f in flows.values()):
            best = min(best, sum(C[c] * f for c, f in flows.items()))
    return float(best)


def _tree_flows(cells, a, b, n, m):
    # flows on a spanning tree are fixed by peeling leaves; None if not a tree
    parent = list(range(n + m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in cells:
        ri, rj = find(i), find(n + j)
        if ri == rj:
            return None
        parent[ri] = rj
    rest = np.concatenate([a, b]).astype(np.float64)
    incident = {x: set() for x in range(n + m)}
    for c in cells:
        incident[c[0]].add(c)
        incident[n + c[1]].add(c)
    flows = {}
    leaves = [x for x in incident if len(incident[x]) == 1]
    while leaves:
        x = leaves.pop()
        if len(incident[x]) != 1:
            continue
        (c,) = incident[x]
        f = rest[x]
        flows[c] = f
        other = n + c[1] if x < n else c[0]
        rest[x] -= f
        rest[other] -= f
        incident[x].discard(c)
        incident[other].discard(c)
        if len(incident[other]) == 1:
            leaves.append(other)
    return flows


def lp_wasserstein_oracle(cost_matrix, mu, nu, certify=True):
    """Exact optimal transport between two discrete measures.

    Solved with the transportation simplex. With ``certify`` the result is
    checked by complementary slackness (dual feasibility and zero duality gap)
    and, when ``n * m <= 12``, against exhaustive vertex enumeration.
    """
    C, a, b = _check_marginals(cost_matrix, mu, nu)
    b = b * (a.sum() / b.sum()) if b.sum() > 0 else b
    plan, u, v = transport_simplex(C, a, b)
    cost = float(np.sum(plan * C))
    if certify:
        scale = max(1.0, float(np.abs(C).max()))
        if np.min(C - u[:, None] - v[None, :]) < -1e-10 * scale:
            raise RuntimeError("dual potentials are infeasible")
        if abs(cost - (u @ a + v @ b)) > 1e-9 * scale:
            raise RuntimeError("nonzero duality gap")
        if np.any(plan < -1e-12) or np.max(np.abs(plan.sum(axis=1) - a)) > 1e-9 \
                or np.max(np.abs(plan.sum(axis=0) - b)) > 1e-9:
            raise RuntimeError("plan violates its marginals")
        if C.size <= 12 and abs(enumerate_transport_vertices(C, a, b) - cost) > 1e-9 * scale:
            raise RuntimeError("plan is not the best basic feasible solution")
    return TransportPlan(plan=plan, cost=cost, row_potentials=u, col_potentials=v)


# -- kernel checks and kNN -------------------------------------------------

@dataclass(frozen=True)
class NegDefReport:
    max_value: float
    scale: float
    trials: int
    tol: float = 1e-10

    @property
    def passed(self):
        return self.max_value <= self.tol * self.scale


def quadratic_form(gram, c):
    c = np.asarray(c, dtype=np.float64)
    return float(c @ gram @ c)


def negdef_check(spec, samples, trials=1000, seed=0, tol=1e-10):
    """Largest ``sum_ij c_i c_j RTW(x_i, x_j)`` over random zero-sum ``c``.

    ``scale`` is the largest ``sum_ij |c_i| |c_j| RTW(x_i, x_j)`` seen, so the
    check passes when ``max_value <= tol * scale``.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two samples")
    G = pairwise_rtw(spec, X)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((trials, X.shape[0]))
    c -= c.mean(axis=1, keepdims=True)
    values = np.einsum("ti,ij,tj->t", c, G, c)
    scales = np.einsum("ti,ij,tj->t", np.abs(c), G, np.abs(c))
    return NegDefReport(
        max_value=float(values.max()) if trials else 0.0,
        scale=float(scales.max()) if trials else 0.0,
        trials=trials,
        tol=tol,
    )


def _vote(labels):
    counts = Counter(labels)
    top = max(counts.values())
    return min(lab for lab, cnt in counts.items() if cnt == top)


def rtw_knn(spec, train_vectors, train_labels, query, k):
    """k-nearest-neighbour label(s) under the relaxed tree-Wasserstein distance.

    Distance ties go to the earlier training vector; vote ties to the
    smallest label. A 1-D ``query`` returns one label, a 2-D one an array.
    """
    train = np.atleast_2d(np.asarray(train_vectors, dtype=np.float64))
    labels = list(train_labels)
    if train.shape[0] == 0 or not labels:
        raise ValueError("empty training set")
    if len(labels) != train.shape[0]:
        raise ValueError("train_vectors and train_labels differ in length")
    if not 1 <= k <= len(labels):
        raise ValueError(f"k must lie in [1, {len(labels)}], got {k}")
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    D = pairwise_rtw(spec, np.atleast_2d(q), train)
    out = []
    for row in D:
        nearest = np.argsort(row, kind="stable")[:k]
        out.append(_vote([labels[i] for i in nearest]))
    return out[0] if single else np.array(out)


def random_oracle_instance(rng, max_nodes=20):
    """Random hard tree with positive weights and two random leaf measures."""
    N = int(rng.integers(2, max_nodes + 1))
    M = int(rng.integers(1, N))
    spec = random_tree(M, N - M, seed=int(rng.integers(2**31)), weights="random")
    K = spec.num_observed
    mu = rng.dirichlet(np.ones(K))
    nu = rng.dirichlet(np.ones(K))
    return spec, mu, nu


def oracle_agreement(trees=200, seed=0, max_nodes=20):
    """Largest gap between the closed form and the LP oracle over random trees."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trees):
        spec, mu, nu = random_oracle_instance(rng, max_nodes)
        M = spec.num_latent
        cost = tree_metric(spec)[M:, M:]
        lp = lp_wasserstein_oracle(cost, mu, nu).cost
        worst = max(worst, abs(tree_wasserstein(spec, mu, nu) - lp))
    return {"trees": trees, "seed": seed, "max_nodes": max_nodes,
            "max_discrepancy": worst, "passed": worst <= 1e-9}
