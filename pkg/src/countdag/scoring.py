"""Ordering and structure recovery for count data by moments-ratio scoring.

The learner alternates an ordering search with a parent search. At step m
the conditional mean of every still-unplaced node given the already-placed
prefix is estimated by an L1-penalized log-linear fit. For a node whose
parents all lie inside the prefix, the conditional law is Poisson, so its
second moment equals E(mu) + E(mu^2) with mu the conditional mean; the
ratio

    E(X^2) / (E(mu) + E(mu^2))

is exactly one in that case and strictly larger when a parent is missing
(overdispersion). The node with the smallest empirical ratio joins the
ordering, and its parents are the nonzero coefficients of a second, more
heavily penalized fit on the same prefix.

Two penalty levels per candidate come from one cross-validated path: the
smallest in-band value (least bias, for the score) and the largest (most
sparsity, for the parents).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .graphs import Dag
from .lasso import (
    DEFAULT_OPTIONS,
    LassoFit,
    LassoProblem,
    SolverOptions,
    cv_select,
    fit_poisson_lasso,
)
from .simulate import CountMatrix

__all__ = [
    "DegenerateColumnError",
    "LearnError",
    "LearnerConfig",
    "MrsResult",
    "ScoreEntry",
    "ScoreTable",
    "mrs_learn",
    "score_first",
    "score_step",
    "select_parents",
]


class DegenerateColumnError(ValueError):
    """A score was requested for an identically zero column."""


class LearnError(RuntimeError):
    """A learner step failed; carries the step and node for context."""

    def __init__(self, message: str, step: int, node: int):
        super().__init__(message)
        self.step = step
        self.node = node


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs for the ordering/parent learner.

    Parameters
    ----------
    folds : int
        Cross-validation folds for the per-candidate penalty search.
    grid_size, ratio : int, float
        Penalty grid: log-spaced from the data-driven maximum down to
        maximum * ratio.
    se_factor : float
        Width of the selection band in standard errors of the minimum
        held-out loss.
    loss : str
        Held-out criterion, "deviance" or "squared_error".
    nonzero_threshold : float
        Coefficient magnitude above which a prefix node counts as a parent.
        The default sits well below the smallest weight magnitude the
        generators produce (0.1) and well above shrinkage-level noise.
    fixed_lambda : float, optional
        Bypass cross-validation and use this penalty for both the score
        and the parent fit.
    seed : int
        Drives fold assignment; folds are redrawn per step, not per
        candidate, so column order cannot leak into the splits.
    jobs : int
        Process count for scoring candidates within a step.
    min_rows : int, optional
        Smallest accepted sample size; defaults to 2 * folds.
    solver : SolverOptions
        Tolerances for the penalized fits.
    """

    folds: int = 5
    grid_size: int = 20
    ratio: float = 1e-2
    se_factor: float = 2.0
    loss: str = "deviance"
    nonzero_threshold: float = 0.02
    fixed_lambda: float | None = None
    seed: int = 0
    jobs: int = 1
    min_rows: int | None = None
    solver: SolverOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.grid_size < 2:
            raise ValueError(f"grid_size must be >= 2, got {self.grid_size}")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.se_factor < 0:
            raise ValueError("se_factor must be >= 0")
        if self.loss not in ("deviance", "squared_error"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.nonzero_threshold < 0:
            raise ValueError("nonzero_threshold must be >= 0")
        if self.fixed_lambda is not None and not self.fixed_lambda >= 0:
            raise ValueError("fixed_lambda must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.min_rows is not None and self.min_rows < 1:
            raise ValueError("min_rows must be >= 1")

    @property
    def rows_required(self) -> int:
        return self.min_rows if self.min_rows is not None else 2 * self.folds


@dataclass(frozen=True)
class ScoreEntry:
    """One candidate's score at one step, with its moment parts."""

    step: int
    node: int
    score: float
    numerator: float
    denominator: float
    lambda_score: float | None = None
    lambda_parent: float | None = None


@dataclass(frozen=True)
class ScoreTable:
    """All (step, candidate) scores produced during one learner run."""

    entries: tuple

    def at_step(self, step: int) -> tuple:
        return tuple(e for e in self.entries if e.step == step)

    def winner(self, step: int) -> int:
        """Argmin score at the step; ties go to the lowest node index."""
        best = None
        for e in self.entries:
            if e.step != step:
                continue
            if best is None or (e.score, e.node) < (best.score, best.node):
                best = e
        if best is None:
            raise KeyError(f"no entries for step {step}")
        return best.node


@dataclass(frozen=True)
class MrsResult:
    """Recovered ordering and graph plus the full score table.

    parent_lambda maps each node placed at step >= 2 to the penalty its
    parent fit used; the first-placed node has no parent fit.
    """

    ordering: tuple
    dag: Dag
    table: ScoreTable
    parent_lambda: dict

    def to_dict(self) -> dict:
        return {
            "ordering": list(self.ordering),
            "dag": self.dag.to_dict(),
            "scores": [
                {
                    "step": e.step,
                    "node": e.node,
                    "score": e.score,
                    "numerator": e.numerator,
                    "denominator": e.denominator,
                    "lambda_score": e.lambda_score,
                    "lambda_parent": e.lambda_parent,
                }
                for e in self.table.entries
            ],
            "parent_lambda": {str(k): v for k, v in sorted(self.parent_lambda.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _column(data: CountMatrix, j: int) -> np.ndarray:
    p = data.values.shape[1]
    if not 1 <= j <= p:
        raise ValueError(f"node {j} out of range 1..{p}")
    return data.values[:, j - 1].astype(np.float64)


def _design(data: CountMatrix, prefix) -> np.ndarray:
    p = data.values.shape[1]
    cols = [int(k) for k in prefix]
    if len(set(cols)) != len(cols):
        raise ValueError("prefix contains repeated nodes")
    for k in cols:
        if not 1 <= k <= p:
            raise ValueError(f"node {k} out of range 1..{p}")
    return data.values[:, [k - 1 for k in cols]].astype(np.float64)


def _first_parts(col: np.ndarray) -> tuple[float, float, float]:
    m1 = float(col.mean())
    if m1 <= 0.0:
        raise DegenerateColumnError("column is identically zero; score undefined")
    num = float((col * col).mean())
    den = m1 + m1 * m1
    return num / den, num, den


def _step_parts(col, design, fit) -> tuple[float, float, float]:
    if fit.coef.shape[0] != design.shape[1]:
        raise ValueError(
            f"fit has {fit.coef.shape[0]} coefficients for a "
            f"{design.shape[1]}-column prefix"
        )
    m1 = float(col.mean())
    if m1 <= 0.0:
        raise DegenerateColumnError("column is identically zero; score undefined")
    eta = fit.intercept + design @ fit.coef
    if not np.all(np.isfinite(eta)):
        raise ValueError("fitted linear predictor is not finite")
    with np.errstate(over="raise"):
        try:
            ex = np.exp(eta)
            den = float((ex + ex * ex).mean())
        except FloatingPointError:
            raise ValueError("fitted mean overflows; score undefined") from None
    num = float((col * col).mean())
    return num / den, num, den


def score_first(data: CountMatrix, j: int) -> float:
    """Marginal moments-ratio score of node j from plain sample moments.

    Returns mean(x^2) / (mean(x) + mean(x)^2); equals one in the limit for
    a node with no parents. Raises DegenerateColumnError on an all-zero
    column.
    """
    return _first_parts(_column(data, j))[0]


def score_step(data: CountMatrix, j: int, prefix, fit: LassoFit) -> float:
    """Conditional moments-ratio score of node j given fitted prefix means.

    Parameters
    ----------
    data : CountMatrix
    j : int
        Node being scored.
    prefix : sequence of int
        Conditioning nodes, in the column order the fit was produced on.
    fit : LassoFit
        Fit of column j on the prefix columns.

    Returns
    -------
    float
        mean(x_j^2) / mean(exp(eta) + exp(2 eta)) with eta the fitted
        linear predictor per row. The denominator uses the exponential
        forms directly rather than squaring an averaged mean.
    """
    return _step_parts(_column(data, j), _design(data, prefix), fit)[0]


def select_parents(fit: LassoFit, threshold: float = 0.02) -> frozenset:
    """1-based positions of coefficients with magnitude above threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return frozenset(int(i) + 1 for i in np.flatnonzero(np.abs(fit.coef) > threshold))


def _fold_seed(seed: int, step: int) -> int:
    # one fold split per step, shared by all candidates at that step
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def _evaluate_candidate(design, config, fold_seed, response):
    """Score one candidate column against the shared prefix design.

    Returns (score, numerator, denominator, lambda_score, lambda_parent,
    parent_intercept, parent_coef). Runs in worker processes when jobs > 1.
    """
    m1 = float(response.mean())
    if m1 <= 0.0:
        raise DegenerateColumnError("column is identically zero; score undefined")
    problem = LassoProblem(design, response)
    if config.fixed_lambda is not None:
        fit = fit_poisson_lasso(problem, config.fixed_lambda, config.solver)
        lam_score = lam_parent = config.fixed_lambda
        score_fit = parent_fit = fit
    else:
        cv = cv_select(
            problem,
            folds=config.folds,
            grid_size=config.grid_size,
            ratio=config.ratio,
            seed=fold_seed,
            se_factor=config.se_factor,
            loss=config.loss,
            options=config.solver,
        )
        lam_score, lam_parent = cv.lambda_band_lo, cv.lambda_band_hi
        score_fit = cv.path.fit_at(lam_score)
        parent_fit = cv.path.fit_at(lam_parent)

    eta = score_fit.intercept + design @ score_fit.coef
    if not np.all(np.isfinite(eta)):
        raise ValueError("fitted linear predictor is not finite")
    with np.errstate(over="raise"):
        try:
            ex = np.exp(eta)
            den = float((ex + ex * ex).mean())
        except FloatingPointError:
            raise ValueError("fitted mean overflows; score undefined") from None
    num = float((response * response).mean())
    return (
        num / den,
        num,
        den,
        lam_score,
        lam_parent,
        parent_fit.intercept,
        np.asarray(parent_fit.coef),
    )


def mrs_learn(data: CountMatrix, config: LearnerConfig = LearnerConfig()) -> MrsResult:
    """Recover a node ordering and a directed graph from count data.

    Step 1 scores every node from plain marginal moments. Each later step
    m fits every remaining node's column on the already-ordered prefix,
    scores it at the least-penalized in-band penalty, appends the argmin
    node to the ordering (ties to the lowest index), and takes that node's
    parents from the nonzero coefficients of the fit at the most-penalized
    in-band penalty. The estimated graph is acyclic by construction.

    Parameters
    ----------
    data : CountMatrix
    config : LearnerConfig

    Returns
    -------
    MrsResult

    Raises
    ------
    LearnError
        On a degenerate column or a failed fit, naming the step and node.
    ValueError
        If the sample is smaller than config.rows_required.
    """
    values = data.values
    n, p = values.shape
    if n < config.rows_required:
        raise ValueError(
            f"need at least {config.rows_required} rows "
            f"(min_rows or 2 * folds), got {n}"
        )

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return _learn_loop(values, config, pool.map)
    return _learn_loop(values, config, map)


def _learn_loop(values: np.ndarray, config: LearnerConfig, mapper) -> MrsResult:
    n, p = values.shape
    cols = values.astype(np.float64)
    order: list[int] = []
    edges: set[tuple[int, int]] = set()
    entries: list[ScoreEntry] = []
    parent_lambda: dict[int, float] = {}
    remaining = list(range(1, p + 1))

    for m in range(1, p + 1):
        scored: list[tuple[float, int]] = []
        if m == 1:
            for j in remaining:
                try:
                    s, num, den = _first_parts(cols[:, j - 1])
                except Exception as exc:
                    raise LearnError(f"step 1, node {j}: {exc}", 1, j) from exc
                entries.append(ScoreEntry(1, j, s, num, den))
                scored.append((s, j))
            winner = min(scored, key=lambda t: (t[0], t[1]))[1]
        else:
            design = cols[:, [k - 1 for k in order]]
            task = partial(_evaluate_candidate, design, config, _fold_seed(config.seed, m))
            results = iter(mapper(task, [cols[:, j - 1] for j in remaining]))
            parent_fits: dict[int, tuple[np.ndarray, float]] = {}
            for j in remaining:
                try:
                    s, num, den, lam_s, lam_p, _b0, coef = next(results)
                except Exception as exc:
                    raise LearnError(f"step {m}, node {j}: {exc}", m, j) from exc
                entries.append(ScoreEntry(m, j, s, num, den, lam_s, lam_p))
                parent_fits[j] = (coef, lam_p)
                scored.append((s, j))
            winner = min(scored, key=lambda t: (t[0], t[1]))[1]
            coef, lam_p = parent_fits[winner]
            parent_lambda[winner] = lam_p
            for pos in np.flatnonzero(np.abs(coef) > config.nonzero_threshold):
                edges.add((order[int(pos)], winner))
        order.append(winner)
        remaining.remove(winner)

    dag = Dag(p, frozenset(edges), order=tuple(order))
    return MrsResult(
        ordering=tuple(order),
        dag=dag,
        table=ScoreTable(tuple(entries)),
        parent_lambda=parent_lambda,
    )
