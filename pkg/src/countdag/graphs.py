"""Directed acyclic graphs over 1-based node indices, their equivalence
classes, and structure-recovery metrics.

Nodes are the integers 1..p throughout. Directed edges are (parent, child)
pairs; undirected edges are stored canonically with the smaller index first.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CycleError",
    "Dag",
    "Cpdag",
    "StructureMetrics",
    "random_dag",
    "topological_order",
    "cpdag_of",
    "edge_metrics",
    "cpdag_metrics",
]


class CycleError(ValueError):
    """Raised when an edge set that should be acyclic contains a cycle."""


def _check_nodes(p: int, pairs, kind: str) -> None:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    for j, k in pairs:
        if not (1 <= j <= p and 1 <= k <= p):
            raise ValueError(f"{kind} edge ({j}, {k}) outside 1..{p}")
        if j == k:
            raise ValueError(f"{kind} edge ({j}, {k}) is a self loop")


def _kahn_order(p: int, edges: frozenset[tuple[int, int]]) -> tuple[int, ...]:
    """Kahn's algorithm with ties broken by lowest node index.

    Raises CycleError naming one offending edge if the graph is cyclic.
    """
    children: dict[int, list[int]] = {j: [] for j in range(1, p + 1)}
    indeg = {j: 0 for j in range(1, p + 1)}
    for j, k in edges:
        children[j].append(k)
        indeg[k] += 1
    ready = [j for j in range(1, p + 1) if indeg[j] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        j = heapq.heappop(ready)
        order.append(j)
        for k in children[j]:
            indeg[k] -= 1
            if indeg[k] == 0:
                heapq.heappush(ready, k)
    if len(order) < p:
        stuck = {k for k in indeg if indeg[k] > 0}
        j, k = next((j, k) for j, k in sorted(edges) if j in stuck and k in stuck)
        raise CycleError(f"edge ({j}, {k}) lies on a cycle")
    return tuple(order)


@dataclass(frozen=True)
class Dag:
    """A directed acyclic graph.

    Parameters
    ----------
    p : int
        Number of nodes; nodes are 1..p.
    edges : iterable of (int, int)
        Directed (parent, child) pairs.
    labels : tuple of str, optional
        Per-node display labels, index j labelled labels[j-1].
    order : tuple of int, optional
        A cached node ordering consistent with the edges. Generators that
        know their ground-truth ordering store it here; by default the
        deterministic Kahn ordering is computed. Ancestral samplers iterate
        nodes in this order.
    """

    p: int
    edges: frozenset = field(default_factory=frozenset)
    labels: tuple | None = None
    order: tuple = ()

    def __post_init__(self):
        edges = frozenset((int(j), int(k)) for j, k in self.edges)
        object.__setattr__(self, "edges", edges)
        _check_nodes(self.p, edges, "directed")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.p:
                raise ValueError("labels length must equal p")
            object.__setattr__(self, "labels", labels)
        if self.order:
            order = tuple(int(j) for j in self.order)
            if sorted(order) != list(range(1, self.p + 1)):
                raise ValueError("order must be a permutation of 1..p")
            pos = {j: m for m, j in enumerate(order)}
            for j, k in sorted(edges):
                if pos[j] > pos[k]:
                    raise CycleError(f"edge ({j}, {k}) violates the given order")
            object.__setattr__(self, "order", order)
        else:
            object.__setattr__(self, "order", _kahn_order(self.p, edges))

    def parents(self, k: int) -> tuple:
        return tuple(sorted(j for j, c in self.edges if c == k))

    def children(self, j: int) -> tuple:
        return tuple(sorted(k for par, k in self.edges if par == j))

    def skeleton(self) -> frozenset:
        """Undirected edge set as canonical (min, max) pairs."""
        return frozenset((min(j, k), max(j, k)) for j, k in self.edges)

    def permute(self, perm) -> "Dag":
        """Relabel nodes; perm[j-1] is the new label of node j.

        The cached ordering moves with the labels, so ancestral sampling of
        the permuted graph visits the same underlying nodes in the same
        sequence.
        """
        perm = tuple(int(x) for x in perm)
        if sorted(perm) != list(range(1, self.p + 1)):
            raise ValueError("perm must be a permutation of 1..p")
        edges = frozenset((perm[j - 1], perm[k - 1]) for j, k in self.edges)
        labels = None
        if self.labels is not None:
            labels = [""] * self.p
            for j in range(1, self.p + 1):
                labels[perm[j - 1] - 1] = self.labels[j - 1]
            labels = tuple(labels)
        order = tuple(perm[j - 1] for j in self.order)
        return Dag(self.p, edges, labels, order)

    def to_dict(self) -> dict:
        out = {
            "p": self.p,
            "edges": [list(e) for e in sorted(self.edges)],
            "undirected": [],
        }
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Dag":
        if d.get("undirected"):
            raise ValueError("a DAG must not carry undirected edges")
        labels = tuple(d["labels"]) if "labels" in d else None
        return cls(int(d["p"]), frozenset(tuple(e) for e in d["edges"]), labels)

    @classmethod
    def from_json(cls, s: str) -> "Dag":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class Cpdag:
    """A partially directed graph representing a Markov equivalence class.

    Directed and undirected edge sets are disjoint; undirected pairs are
    stored with the smaller index first.
    """

    p: int
    directed: frozenset = field(default_factory=frozenset)
    undirected: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        directed = frozenset((int(j), int(k)) for j, k in self.directed)
        undirected = frozenset(
            (min(int(j), int(k)), max(int(j), int(k))) for j, k in self.undirected
        )
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)
        _check_nodes(self.p, directed, "directed")
        _check_nodes(self.p, undirected, "undirected")
        dir_pairs = {(min(j, k), max(j, k)) for j, k in directed}
        both = dir_pairs & undirected
        if both:
            raise ValueError(f"edge {sorted(both)[0]} is both directed and undirected")

    def skeleton(self) -> frozenset:
        dir_pairs = frozenset((min(j, k), max(j, k)) for j, k in self.directed)
        return dir_pairs | self.undirected

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "edges": [list(e) for e in sorted(self.directed)],
            "undirected": [list(e) for e in sorted(self.undirected)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Cpdag":
        return cls(
            int(d["p"]),
            frozenset(tuple(e) for e in d["edges"]),
            frozenset(tuple(e) for e in d.get("undirected", [])),
        )

    @classmethod
    def from_json(cls, s: str) -> "Cpdag":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class StructureMetrics:
    """Precision/recall style counts for a recovered edge set.

    precision is 1.0 when nothing was estimated (no false claims were made),
    and recall is 1.0 when the true edge set is empty.
    """

    tp: int
    n_estimated: int
    n_true: int
    precision: float
    recall: float

    @classmethod
    def from_counts(cls, tp: int, n_estimated: int, n_true: int) -> "StructureMetrics":
        if not (0 <= tp <= n_estimated and tp <= n_true):
            raise ValueError("impossible counts")
        precision = 1.0 if n_estimated == 0 else tp / n_estimated
        recall = 1.0 if n_true == 0 else tp / n_true
        return cls(tp, n_estimated, n_true, precision, recall)


def random_dag(p: int, d: int, seed: int) -> Dag:
    """Draw a random DAG with bounded in-degree.

    A uniformly random permutation of 1..p is the ground-truth ordering and
    is stored on the result. Each node, independently, gets a parent count
    drawn uniformly from {0, ..., min(d, #predecessors)} and that many
    parents chosen uniformly without replacement from its predecessors.

    Parameters
    ----------
    p : int
        Node count, >= 1.
    d : int
        Maximum in-degree, >= 0.
    seed : int
        Seed for the Philox counter-based generator.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    order = tuple(int(x) for x in rng.permutation(p) + 1)
    edges = set()
    for m, child in enumerate(order):
        hi = min(d, m)
        count = int(rng.integers(0, hi + 1)) if hi > 0 else 0
        if count > 0:
            preds = np.array(order[:m])
            parents = rng.choice(preds, size=count, replace=False)
            edges.update((int(j), child) for j in parents)
    return Dag(p, frozenset(edges), order=order)


def topological_order(dag: Dag) -> tuple:
    """Deterministic topological ordering: Kahn's algorithm, lowest node
    index first among the ready set."""
    return _kahn_order(dag.p, dag.edges)


def _meek_closure(p: int, directed: set, undirected: set) -> None:
    """Orient undirected edges in place until no rule fires.

    directed holds (j, k) pairs, undirected holds canonical (min, max)
    pairs. The four rules each orient an edge only when every consistent
    completion agrees on its direction.
    """

    def adjacent(a, b):
        return (
            (a, b) in directed
            or (b, a) in directed
            or (min(a, b), max(a, b)) in undirected
        )

    def orient(a, b):
        undirected.discard((min(a, b), max(a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected):
            for x, y in ((a, b), (b, a)):
                # R1: c -> x, x - y, c and y nonadjacent  =>  x -> y
                if any(c != y and not adjacent(c, y) for c, t in directed if t == x):
                    orient(x, y)
                    changed = True
                    break
                # R2: x -> c -> y with x - y  =>  x -> y
                if any(
                    (x, c) in directed and (c, y) in directed
                    for c in range(1, p + 1)
                ):
                    orient(x, y)
                    changed = True
                    break
                # R3: x - c, x - d, c -> y, d -> y, c and d nonadjacent  =>  x -> y
                spouses = [
                    c
                    for c, t in directed
                    if t == y and (min(x, c), max(x, c)) in undirected
                ]
                if any(
                    not adjacent(c, d)
                    for i, c in enumerate(spouses)
                    for d in spouses[i + 1 :]
                ):
                    orient(x, y)
                    changed = True
                    break
                # R4: x - c, c -> d, d -> y, c and y nonadjacent  =>  x -> y
                if any(
                    (min(x, c), max(x, c)) in undirected
                    and (d, y) in directed
                    and not adjacent(c, y)
                    for c, d in directed
                ):
                    orient(x, y)
                    changed = True
                    break
            if changed:
                break


def cpdag_of(dag: Dag) -> Cpdag:
    """Equivalence-class graph of a DAG.

    Edges participating in a v-structure (j -> k <- l with j, l nonadjacent)
    keep their orientation, the orientation closure rules are applied to a
    fixed point, and everything else is undirected. Idempotent in the sense
    that every DAG in the class maps to the same result.
    """
    skel = dag.skeleton()

    def adjacent(a, b):
        return (min(a, b), max(a, b)) in skel

    directed: set = set()
    for k in range(1, dag.p + 1):
        pars = dag.parents(k)
        for i, j in enumerate(pars):
            for l in pars[i + 1 :]:
                if not adjacent(j, l):
                    directed.add((j, k))
                    directed.add((l, k))
    undirected = {e for e in skel if (e not in directed and (e[1], e[0]) not in directed)}
    _meek_closure(dag.p, directed, undirected)
    # Orientations always come from the input DAG; anything else is a bug.
    assert directed <= dag.edges
    return Cpdag(dag.p, frozenset(directed), frozenset(undirected))


def edge_metrics(estimated: Dag, truth: Dag) -> StructureMetrics:
    """Directed-edge precision/recall; an edge counts only with the exact
    orientation."""
    if estimated.p != truth.p:
        raise ValueError("graphs have different node counts")
    tp = len(estimated.edges & truth.edges)
    return StructureMetrics.from_counts(tp, len(estimated.edges), len(truth.edges))


def cpdag_metrics(estimated: Cpdag, truth: Cpdag) -> StructureMetrics:
    """Equivalence-class precision/recall; an edge counts only when both
    its endpoints and its type (directed with orientation, or undirected)
    match."""
    if estimated.p != truth.p:
        raise ValueError("graphs have different node counts")
    tp = len(estimated.directed & truth.directed) + len(
        estimated.undirected & truth.undirected
    )
    n_est = len(estimated.directed) + len(estimated.undirected)
    n_true = len(truth.directed) + len(truth.undirected)
    return StructureMetrics.from_counts(tp, n_est, n_true)
