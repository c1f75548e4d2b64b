"""Label hierarchies over observed and latent labels.

Nodes are ordered latent first (index 0 is the root) and observed labels
last, so for ``M`` latent and ``K`` observed labels the full adjacency is the
block matrix ``[[A1, A2], [0, 0]]`` of size ``N = M + K``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from ._backend import kernels

COLUMN_TOL = 1e-8


class SpecStructureError(ValueError):
    """Raised when hierarchy arrays have inconsistent shapes or bad values."""


class ModeError(ValueError):
    """Raised when an operation needs a hard tree but got a soft one (or vice versa)."""


@dataclass(frozen=True)
class Violation:
    condition: str
    index: int
    message: str

    def to_dict(self):
        return {"condition": self.condition, "index": self.index, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(v.message for v in self.violations)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HierarchySpec:
    """A SEAL extension: latent prior ``A1``, assignment ``A2`` and node weights.

    ``A1`` is ``M x M`` with entries in {0, 1}; ``A2`` is ``M x K`` and either
    hard (one-hot columns) or soft (columns on the probability simplex).
    ``weights`` has length ``N`` and defaults to all ones.
    """

    A1: np.ndarray
    A2: np.ndarray
    weights: np.ndarray | None = None
    soft: bool = False
    observed_names: tuple = field(default=())
    latent_names: tuple = field(default=())

    def __post_init__(self):
        A1 = np.asarray(self.A1, dtype=np.float64)
        A2 = np.asarray(self.A2, dtype=np.float64)
        if A1.ndim != 2 or A1.shape[0] != A1.shape[1]:
            raise SpecStructureError(f"A1 must be square, got shape {A1.shape}")
        if A2.ndim != 2 or A2.shape[0] != A1.shape[0]:
            raise SpecStructureError(
                f"A2 must have {A1.shape[0]} rows to match A1, got shape {A2.shape}"
            )
        M, K = A2.shape
        if M < 1 or K < 1:
            raise SpecStructureError("need at least one latent and one observed label")
        if not (np.all(np.isfinite(A1)) and np.all(np.isfinite(A2))):
            raise SpecStructureError("A1 and A2 must be finite")
        w = np.ones(M + K) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if w.shape != (M + K,):
            raise SpecStructureError(f"weights must have length {M + K}, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise SpecStructureError("weights must be finite")
        obs = tuple(str(s) for s in self.observed_names) or tuple(f"class_{r}" for r in range(K))
        lat = tuple(str(s) for s in self.latent_names) or tuple(
            ["root"] + [f"latent_{s}" for s in range(1, M)]
        )
        if len(obs) != K:
            raise SpecStructureError(f"expected {K} observed names, got {len(obs)}")
        if len(lat) != M:
            raise SpecStructureError(f"expected {M} latent names, got {len(lat)}")
        object.__setattr__(self, "A1", _frozen(A1))
        object.__setattr__(self, "A2", _frozen(A2))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "soft", bool(self.soft))
        object.__setattr__(self, "observed_names", obs)
        object.__setattr__(self, "latent_names", lat)

    @property
    def num_latent(self):
        return self.A1.shape[0]

    @property
    def num_observed(self):
        return self.A2.shape[1]

    @property
    def num_nodes(self):
        return self.num_latent + self.num_observed

    @property
    def node_names(self):
        return self.latent_names + self.observed_names

    @property
    def adjacency(self):
        M, K = self.num_latent, self.num_observed
        A = np.zeros((M + K, M + K))
        A[:M, :M] = self.A1
        A[:M, M:] = self.A2
        return A

    @cached_property
    def closure(self):
        """``(I - A1)^-1`` by back-substitution."""
        c = kernels.absorb(self.A1, np.eye(self.num_latent))
        c.setflags(write=False)
        return c

    @cached_property
    def alpha(self):
        a = kernels.absorb(self.A1, self.A2)
        a.setflags(write=False)
        return a

    @cached_property
    def extension(self):
        """The stacked ``N x K`` lifting matrix ``[alpha; I]``."""
        e = np.vstack([self.alpha, np.eye(self.num_observed)])
        e.setflags(write=False)
        return e

    @cached_property
    def parents(self):
        """Parent index of every node (``-1`` for the root); hard trees only."""
        require_hard(self)
        M = self.num_latent
        par = np.full(self.num_nodes, -1, dtype=np.int64)
        par[1:M] = np.argmax(self.A1[:, 1:], axis=0)
        par[M:] = np.argmax(self.A2, axis=0)
        par.setflags(write=False)
        return par

    @cached_property
    def children(self):
        kids = [[] for _ in range(self.num_nodes)]
        for v, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(v)
        return tuple(tuple(k) for k in kids)

    def with_A2(self, A2, soft=None):
        return replace(self, A2=A2, soft=self.soft if soft is None else soft)


def require_hard(spec):
    if spec.soft:
        raise ModeError("operation requires a hard tree; call harden() first")


def validate_adjacency(spec, tol=COLUMN_TOL):
    """Check the directed-rooted-tree conditions on the block adjacency.

    Condition 1 is strict upper triangularity of the full adjacency; condition 2
    requires every non-root column to sum to one and the root column to zero.
    Hard specs additionally need entries in {0, 1}; soft specs need ``A2`` in
    [0, 1]. Returns a :class:`ValidationReport`.
    """
    M = spec.num_latent
    A1, A2 = spec.A1, spec.A2
    out = []

    rows, cols = np.nonzero(np.abs(np.tril(A1)) > tol)
    for i, j in zip(rows, cols):
        out.append(Violation("1", int(j), f"condition 1 violated at row {i}, column {j}: "
                                          f"A1[{i},{j}] = {A1[i, j]:g} on or below the diagonal"))

    bad_a1 = ~(np.isclose(A1, 0.0, atol=tol) | np.isclose(A1, 1.0, atol=tol))
    for i, j in zip(*np.nonzero(bad_a1)):
        out.append(Violation("entries", int(j), f"A1[{i},{j}] = {A1[i, j]:g} is not in {{0, 1}}"))
    if spec.soft:
        bad_a2 = (A2 < -tol) | (A2 > 1 + tol)
        kind = "outside [0, 1]"
    else:
        bad_a2 = ~(np.isclose(A2, 0.0, atol=tol) | np.isclose(A2, 1.0, atol=tol))
        kind = "not in {0, 1}"
    for i, r in zip(*np.nonzero(bad_a2)):
        out.append(Violation("entries", int(M + r), f"A2[{i},{r}] = {A2[i, r]:g} is {kind}"))

    sums = np.concatenate([A1.sum(axis=0), A2.sum(axis=0)])
    expected = np.ones_like(sums)
    expected[0] = 0.0
    for j in np.nonzero(np.abs(sums - expected) > tol)[0]:
        out.append(Violation("2", int(j), f"condition 2 violated at column {j}: "
                                          f"column sum {sums[j]:g}, expected {expected[j]:g}"))

    for v in np.nonzero(spec.weights < 0)[0]:
        out.append(Violation("weights", int(v), f"weight w[{v}] = {spec.weights[v]:g} is negative"))
    return ValidationReport(tuple(out))


def check_valid(spec):
    report = validate_adjacency(spec)
    if not report.ok:
        raise SpecStructureError(str(report))
    return spec


def absorption(spec):
    """Absorption probabilities ``alpha = (I - A1)^-1 A2`` of shape ``M x K``."""
    return spec.alpha


def subtree_masses(spec, mu):
    """Mass ``mu(Gamma(v))`` of the leaves below every node, by tree traversal."""
    require_hard(spec)
    mu = check_prob_vector(mu, spec.num_observed)
    M = spec.num_latent
    mass = np.zeros(spec.num_nodes)
    mass[M:] = mu
    par = spec.parents
    # parents have smaller indices, so a reverse sweep visits children first
    for v in range(spec.num_nodes - 1, 0, -1):
        mass[par[v]] += mass[v]
    return mass


def subtree_mass(spec, mu, node):
    if not 0 <= node < spec.num_nodes:
        raise IndexError(f"node {node} out of range for {spec.num_nodes} nodes")
    return float(subtree_masses(spec, mu)[node])


def tree_metric(spec):
    """Pairwise path lengths; node ``v`` carries the weight of its incoming edge."""
    require_hard(spec)
    N = spec.num_nodes
    par = spec.parents
    depth = np.zeros(N)
    ancestors = [frozenset([0])] + [None] * (N - 1)
    for v in range(1, N):
        depth[v] = depth[par[v]] + spec.weights[v]
        ancestors[v] = ancestors[par[v]] | {v}
    D = np.zeros((N, N))
    for u in range(N):
        for v in range(u + 1, N):
            common = ancestors[u] & ancestors[v]
            lca_depth = max(depth[a] for a in common)
            D[u, v] = D[v, u] = depth[u] + depth[v] - 2.0 * lca_depth
    return D


def harden(spec):
    """Replace each column of ``A2`` by a one-hot at its argmax (ties to the lowest index)."""
    idx = np.argmax(spec.A2, axis=0)
    A2 = np.zeros_like(spec.A2)
    A2[idx, np.arange(spec.num_observed)] = 1.0
    return spec.with_A2(A2, soft=False)


def check_prob_vector(p, K=None, tol=1e-8):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"probability vector must be 1-D, got shape {p.shape}")
    if K is not None and p.shape[0] != K:
        raise ValueError(f"probability vector must have length {K}, got {p.shape[0]}")
    if not np.all(np.isfinite(p)) or np.any(p < -tol):
        raise ValueError("probability vector entries must be finite and nonnegative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probability vector sums to {p.sum():.12g}, not 1")
    return p


# -- construction ----------------------------------------------------------

def _a1_from_parents(latent_parents):
    M = len(latent_parents)
    A1 = np.zeros((M, M))
    for j in range(1, M):
        A1[latent_parents[j], j] = 1.0
    return A1


def star_tree(num_observed, **kwargs):
    return HierarchySpec(np.zeros((1, 1)), np.ones((1, num_observed)), **kwargs)


def balanced_tree(num_latent, num_observed, branching=2, *, soft=False, seed=None,
                  concentration=1.0, **kwargs):
    """Complete ``branching``-ary latent tree in breadth-first order.

    Observed labels fill the deepest latent nodes in contiguous blocks (hard)
    or drawn from a Dirichlet over all latent nodes (soft).
    """
    parents = [-1] + [(j - 1) // branching for j in range(1, num_latent)]
    A1 = _a1_from_parents(parents)
    if soft:
        A2 = _dirichlet_columns(num_latent, num_observed, np.random.default_rng(seed), concentration)
    else:
        has_child = set(parents[1:])
        leaves = [j for j in range(num_latent) if j not in has_child]
        A2 = np.zeros((num_latent, num_observed))
        for r in range(num_observed):
            A2[leaves[r * len(leaves) // num_observed], r] = 1.0
    return HierarchySpec(A1, A2, soft=soft, **kwargs)


def _dirichlet_columns(M, K, rng, concentration):
    return rng.dirichlet(np.full(M, concentration), size=K).T


def random_tree(num_latent, num_observed, *, seed=None, depth=None, soft=False,
                attach="any", concentration=1.0, weights="unit", **kwargs):
    """Random latent prior tree with observed labels attached below it.

    Parameters
    ----------
    depth : int, optional
        Number of latent levels (root included). When omitted every latent
        node picks a uniformly random earlier node as its parent.
    attach : {"any", "leaves"}
        Which latent nodes observed labels may hang from.
    concentration : float
        Dirichlet concentration for soft assignment columns.
    weights : {"unit", "random"}
        Unit weights or weights drawn from U(0.1, 2).
    """
    rng = np.random.default_rng(seed)
    M, K = num_latent, num_observed
    if depth is None:
        parents = [-1] + [int(rng.integers(0, j)) for j in range(1, M)]
    else:
        if not 1 <= depth <= M:
            raise ValueError(f"depth must lie in [1, {M}], got {depth}")
        if depth == 1 and M > 1:
            raise ValueError("a depth-1 prior holds only the root")
        extra = rng.integers(1, depth, size=M - depth) if depth > 1 else []
        levels = sorted(list(range(depth)) + [int(x) for x in extra])
        parents = [-1]
        for j in range(1, M):
            prev = [i for i in range(j) if levels[i] == levels[j] - 1]
            parents.append(int(rng.choice(prev)))
    A1 = _a1_from_parents(parents)
    if attach == "any":
        eligible = np.arange(M)
    elif attach == "leaves":
        has_child = set(parents[1:])
        eligible = np.array([j for j in range(M) if j not in has_child])
    else:
        raise ValueError(f"unknown attach mode {attach!r}")
    A2 = np.zeros((M, K))
    if soft:
        A2[eligible] = _dirichlet_columns(len(eligible), K, rng, concentration)
    else:
        A2[rng.choice(eligible, size=K), np.arange(K)] = 1.0
    if weights == "unit":
        w = None
    elif weights == "random":
        w = rng.uniform(0.1, 2.0, size=M + K)
    else:
        raise ValueError(f"unknown weights mode {weights!r}")
    return HierarchySpec(A1, A2, weights=w, soft=soft, **kwargs)


# -- serialization ---------------------------------------------------------

def to_json_dict(spec):
    return {
        "K": spec.num_observed,
        "M": spec.num_latent,
        "A1": spec.A1.tolist(),
        "A2": spec.A2.tolist(),
        "w": spec.weights.tolist(),
        "observed_names": list(spec.observed_names),
        "latent_names": list(spec.latent_names),
        "soft": spec.soft,
    }


def from_json_dict(d):
    try:
        A1 = np.asarray(d["A1"], dtype=np.float64)
        A2 = np.asarray(d["A2"], dtype=np.float64)
    except KeyError as exc:
        raise SpecStructureError(f"tree JSON is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SpecStructureError(f"tree JSON has malformed matrices: {exc}") from None
    if "M" in d and A1.shape[:1] != (int(d["M"]),):
        raise SpecStructureError(f"M = {d['M']} does not match A1 shape {A1.shape}")
    if "K" in d and (A2.ndim != 2 or A2.shape[1] != int(d["K"])):
        raise SpecStructureError(f"K = {d['K']} does not match A2 shape {A2.shape}")
    soft = d.get("soft")
    if soft is None:
        soft = bool(np.any((A2 != 0.0) & (A2 != 1.0)))
    return HierarchySpec(
        A1, A2, weights=d.get("w"), soft=soft,
        observed_names=tuple(d.get("observed_names") or ()),
        latent_names=tuple(d.get("latent_names") or ()),
    )


def load_tree(path):
    with open(path) as fh:
        return from_json_dict(json.load(fh))


def save_tree(spec, path):
    Path(path).write_text(json.dumps(to_json_dict(spec), indent=2))


def _dot_quote(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(spec, name="hierarchy"):
    """DOT text for a hard tree: parent -> child edges labelled by weight."""
    require_hard(spec)
    M = spec.num_latent
    names = spec.node_names
    lines = [f"digraph {_dot_quote(name)} {{"]
    for v in range(spec.num_nodes):
        shape = "box" if v >= M else "ellipse"
        lines.append(f"  n{v} [label={_dot_quote(names[v])}, shape={shape}];")
    for v in range(1, spec.num_nodes):
        lines.append(f"  n{spec.parents[v]} -> n{v} [label={_dot_quote(format(spec.weights[v], 'g'))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
