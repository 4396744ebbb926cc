"""Reference learners for benchmarking the moments-ratio learner.

Two baselines bracket the method from opposite sides. The oracle keeps
the estimated node ordering but replaces parent selection with the true
parent sets, isolating how much error comes from ordering alone. The
Poisson MRF learner drops directionality entirely and recovers an
undirected conditional-dependence graph by node-wise penalized
regression, the standard neighborhood-selection recipe.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .graphs import Dag
from .lasso import LassoProblem, cv_select, fit_poisson_lasso
from .scoring import (
    DegenerateColumnError,
    LearnerConfig,
    MrsResult,
    mrs_learn,
)

__all__ = [
    "UndirectedGraph",
    "oracle_learn",
    "pmrf_learn",
    "pmrf_neighborhoods",
]


@dataclass(frozen=True)
class UndirectedGraph:
    """Undirected graph on nodes 1..p with canonical (low, high) edge pairs."""

    p: int
    edges: frozenset

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        for e in self.edges:
            if len(e) != 2:
                raise ValueError(f"edge {e!r} is not a pair")
            a, b = e
            if not (1 <= a <= self.p and 1 <= b <= self.p):
                raise ValueError(f"edge {e!r} out of range for p={self.p}")
            if a == b:
                raise ValueError(f"self-loop at node {a}")
            if a > b:
                raise ValueError(f"edge {e!r} is not in (low, high) order")

    def neighbors(self, j: int) -> tuple:
        if not (1 <= j <= self.p):
            raise ValueError(f"node {j} out of range")
        return tuple(sorted(a if b == j else b for a, b in self.edges if j in (a, b)))

    def has_edge(self, j: int, k: int) -> bool:
        return (min(j, k), max(j, k)) in self.edges

    def to_dict(self) -> dict:
        # same schema as the directed graphs, with an empty directed set
        return {
            "p": self.p,
            "edges": [],
            "undirected": [list(e) for e in sorted(self.edges)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "UndirectedGraph":
        if d.get("edges"):
            raise ValueError("undirected graph JSON must have an empty edges list")
        return cls(int(d["p"]), frozenset(tuple(e) for e in d.get("undirected", [])))

    @classmethod
    def from_json(cls, s: str) -> "UndirectedGraph":
        return cls.from_dict(json.loads(s))


def oracle_learn(data, truth: Dag, config: LearnerConfig = LearnerConfig()) -> MrsResult:
    """Estimate the ordering as usual but take parents from a known graph.

    The ordering, score table, and tie-breaking are exactly those of
    mrs_learn on the same data and config. Parent selection is replaced:
    node pi_m placed at step m receives an edge from every true parent
    that appears in pi_1..pi_{m-1}. True parents placed after their child
    are dropped, so ordering mistakes still cost recall; the edge set is
    always a subset of the true edges.

    Parameters
    ----------
    data : CountMatrix
    truth : Dag
        The generating graph; must have the same number of nodes as data.
    config : LearnerConfig

    Returns
    -------
    MrsResult
        parent_lambda is empty because no parent-selection fit is used.

    Raises
    ------
    LearnError, ValueError
        As mrs_learn.
    """
    if truth.p != data.p:
        raise ValueError(f"truth has {truth.p} nodes but data has {data.p} columns")
    base = mrs_learn(data, config)
    edges: set[tuple[int, int]] = set()
    placed: set[int] = set()
    for node in base.ordering:
        edges.update((k, node) for k in truth.parents(node) if k in placed)
        placed.add(node)
    dag = Dag(data.p, frozenset(edges), order=base.ordering)
    return MrsResult(
        ordering=base.ordering,
        dag=dag,
        table=base.table,
        parent_lambda={},
    )


def _node_seed(seed: int, j: int) -> int:
    # one fold split per node, independent of the other regressions
    return int(np.random.SeedSequence([seed, j]).generate_state(1)[0])


def _neighborhood(values, config, j):
    """Support of the penalized regression of column j on all others.

    Returns {neighbor: coefficient} keyed by 1-based node, keeping only
    magnitudes above config.nonzero_threshold. Runs in worker processes
    when jobs > 1.
    """
    y = values[:, j - 1]
    if float(y.mean()) <= 0.0:
        raise DegenerateColumnError(f"node {j}: column is identically zero")
    others = [k for k in range(1, values.shape[1] + 1) if k != j]
    problem = LassoProblem(values[:, [k - 1 for k in others]], y)
    if config.fixed_lambda is not None:
        fit = fit_poisson_lasso(problem, config.fixed_lambda, config.solver)
    else:
        cv = cv_select(
            problem,
            folds=config.folds,
            grid_size=config.grid_size,
            ratio=config.ratio,
            seed=_node_seed(config.seed, j),
            se_factor=config.se_factor,
            loss=config.loss,
            options=config.solver,
        )
        fit = cv.path.fit_at(cv.lambda_band_hi)
    coef = np.asarray(fit.coef)
    keep = np.flatnonzero(np.abs(coef) > config.nonzero_threshold)
    return {others[int(i)]: float(coef[int(i)]) for i in keep}


def pmrf_neighborhoods(data, config: LearnerConfig = LearnerConfig()) -> dict:
    """Per-node regression supports with signed coefficients.

    Maps each node j to {neighbor: coefficient} from the fit of column j
    on all other columns at the most-penalized in-band penalty. This is
    the diagnostic view behind pmrf_learn: a pairwise Poisson MRF is only
    normalizable with nonpositive interactions, so positive coefficients
    here flag dependence the undirected model cannot represent.

    Raises
    ------
    DegenerateColumnError
        If some column is identically zero.
    ValueError
        If p < 2 or the sample is smaller than config.rows_required.
    """
    values = data.values.astype(np.float64)
    n, p = values.shape
    if p < 2:
        raise ValueError("need at least 2 columns")
    if n < config.rows_required:
        raise ValueError(
            f"need at least {config.rows_required} rows "
            f"(min_rows or 2 * folds), got {n}"
        )
    nodes = list(range(1, p + 1))
    task = partial(_neighborhood, values, config)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            supports = list(pool.map(task, nodes))
    else:
        supports = [task(j) for j in nodes]
    return dict(zip(nodes, supports))


def pmrf_learn(
    data,
    config: LearnerConfig = LearnerConfig(),
    combine_rule: str = "and",
) -> UndirectedGraph:
    """Recover an undirected dependence graph by neighborhood selection.

    Each node's column is regressed on all other columns with an l1
    Poisson fit at the cross-validated most-penalized in-band penalty;
    the nonzero support is that node's neighborhood estimate. The "and"
    rule keeps an edge only when each endpoint selects the other, the
    "or" rule when either does, so the "and" graph is always a subgraph
    of the "or" graph. Coefficient signs are unconstrained; see
    pmrf_neighborhoods for the sign diagnostics.

    Parameters
    ----------
    data : CountMatrix
    config : LearnerConfig
    combine_rule : str
        "and" (default) or "or", case-insensitive.

    Returns
    -------
    UndirectedGraph

    Raises
    ------
    DegenerateColumnError, ValueError
        From the node-wise fits, or on an unknown combine_rule.
    """
    rule = combine_rule.lower()
    if rule not in ("and", "or"):
        raise ValueError(f"combine_rule must be 'and' or 'or', got {combine_rule!r}")
    nbhd = pmrf_neighborhoods(data, config)
    edges: set[tuple[int, int]] = set()
    for j, neighbors in nbhd.items():
        for k in neighbors:
            if rule == "and" and j not in nbhd[k]:
                continue
            edges.add((min(j, k), max(j, k)))
    return UndirectedGraph(data.p, frozenset(edges))
