"""Seeded benchmark sweeps over synthetic count-data structure problems.

An ExperimentSpec pins everything a sweep needs: the generating model
family, graph size and sparsity, a sample-size grid, the learners to
compare, and one master seed from which every trial's graph, parameters,
data, and fold splits are derived. run_experiment produces one row per
(learner, n, trial) holding directed-edge and equivalence-class metrics
plus wall-clock, records learner failures instead of aborting, and can
persist the truth and estimate graphs beside the CSV report for audit.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np

from .baselines import oracle_learn, pmrf_learn
from .graphs import (
    Dag,
    StructureMetrics,
    cpdag_metrics,
    cpdag_of,
    edge_metrics,
    random_dag,
)
from .scoring import LearnerConfig, mrs_learn
from .simulate import generate_identity_dataset, generate_sem_dataset

__all__ = [
    "ExperimentSpec",
    "TrialRow",
    "BenchReport",
    "SummaryRow",
    "RuntimeTable",
    "load_spec",
    "run_experiment",
    "summarize",
    "report_csv",
    "summary_csv",
    "runtime_scaling",
]

LEARNERS = ("mrs", "oracle", "pmrf")
MODELS = ("log", "identity")


@dataclass(frozen=True)
class ExperimentSpec:
    """Complete description of one benchmark sweep.

    model "log" generates log-link structural data, "identity" the
    identity-link variant. intercept_range and weight_range of None fall
    through to the generator defaults for the chosen family. Every trial
    draws a fresh graph; each (trial, n) cell draws a fresh dataset from
    that graph. trials, folds, and thresholds apply to every learner.
    """

    p: int
    d: int
    n_grid: tuple
    trials: int
    learners: tuple = ("mrs",)
    model: str = "log"
    intercept_range: tuple | None = None
    weight_range: tuple | None = None
    max_retries: int = 100
    min_support: int = 1
    seed: int = 0
    jobs: int = 1
    outdir: str | None = None
    folds: int = 5
    grid_size: int = 20
    se_factor: float = 2.0
    loss: str = "deviance"
    nonzero_threshold: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "learners", tuple(self.learners))
        for name in ("intercept_range", "weight_range"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, (float(v[0]), float(v[1])))
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not (0 <= self.d < self.p):
            raise ValueError("need 0 <= d < p")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ValueError("n_grid must be nonempty with positive entries")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.learners:
            raise ValueError("learner list must be nonempty")
        for name in self.learners:
            if name not in LEARNERS:
                raise ValueError(f"unknown learner {name!r}; choose from {LEARNERS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.learner_config(0)  # surface bad fit settings now, not mid-sweep

    def learner_config(self, seed: int) -> LearnerConfig:
        return LearnerConfig(
            folds=self.folds,
            grid_size=self.grid_size,
            se_factor=self.se_factor,
            loss=self.loss,
            nonzero_threshold=self.nonzero_threshold,
            seed=seed,
        )


def load_spec(path) -> ExperimentSpec:
    """Read an ExperimentSpec from a TOML or JSON file.

    The format is chosen by suffix (.json is JSON, anything else TOML).
    Keys that are not spec fields are rejected so typos fail loudly.
    """
    import tomli

    p = Path(path)
    raw = p.read_bytes()
    if p.suffix.lower() == ".json":
        doc = json.loads(raw.decode())
    else:
        doc = tomli.loads(raw.decode())
    if not isinstance(doc, dict):
        raise ValueError("spec file must hold a table of settings")
    known = {f.name for f in fields(ExperimentSpec)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown spec keys: {', '.join(unknown)}")
    return ExperimentSpec(**doc)


@dataclass(frozen=True)
class TrialRow:
    """Outcome of one learner on one (trial, n) dataset.

    dag holds directed-edge metrics and cpdag equivalence-class metrics;
    for the undirected learner dag is None and cpdag holds skeleton
    metrics. failure carries the error message when the cell failed, in
    which case both metric slots are None.
    """

    learner: str
    n: int
    trial: int
    dag: StructureMetrics | None
    cpdag: StructureMetrics | None
    seconds: float
    failure: str | None = None


@dataclass(frozen=True)
class BenchReport:
    """All trial rows of a sweep, in (trial, n, learner) order."""

    spec: ExperimentSpec
    rows: tuple

    def failures(self) -> int:
        return sum(1 for r in self.rows if r.failure is not None)


@dataclass(frozen=True)
class SummaryRow:
    """Aggregate of one (learner, n) cell over its non-failed trials.

    Standard errors are None when fewer than two trials contributed;
    metric means are None when no trial contributed (all failed, or the
    learner has no metrics of that kind).
    """

    learner: str
    n: int
    trials: int
    failures: int
    dag_precision: float | None
    dag_precision_se: float | None
    dag_recall: float | None
    dag_recall_se: float | None
    cpdag_precision: float | None
    cpdag_precision_se: float | None
    cpdag_recall: float | None
    cpdag_recall_se: float | None


def _derived_seed(*entries) -> int:
    return int(np.random.SeedSequence(list(entries)).generate_state(1)[0])


def _run_cell(learner, data, truth, truth_cpdag, config):
    """Run one learner and score it; returns (dag, cpdag, graph_dict)."""
    if learner == "mrs":
        est = mrs_learn(data, config).dag
    elif learner == "oracle":
        est = oracle_learn(data, truth, config).dag
    else:
        g = pmrf_learn(data, config)
        skel = truth.skeleton()
        tp = len(g.edges & skel)
        m = StructureMetrics.from_counts(tp, len(g.edges), len(skel))
        return None, m, g.to_dict()
    return edge_metrics(est, truth), cpdag_metrics(cpdag_of(est), truth_cpdag), est.to_dict()


def _run_trial(spec: ExperimentSpec, trial: int):
    """All rows and artifacts for one trial; runs in workers when jobs > 1."""
    generate = generate_sem_dataset if spec.model == "log" else generate_identity_dataset
    ranges = {}
    if spec.intercept_range is not None:
        ranges["intercept_range"] = spec.intercept_range
    if spec.weight_range is not None:
        ranges["weight_range"] = spec.weight_range
    truth = random_dag(spec.p, spec.d, seed=_derived_seed(spec.seed, trial, 0))
    truth_cpdag = cpdag_of(truth)
    rows: list[TrialRow] = []
    artifacts: list[tuple[str, str]] = []
    for n in spec.n_grid:
        cell = f"trial{trial:03d}_n{n}"
        artifacts.append((f"{cell}/truth.json", truth.to_json()))
        try:
            _, data, _ = generate(
                truth,
                n,
                seed=_derived_seed(spec.seed, trial, 1, n),
                max_retries=spec.max_retries,
                min_support=spec.min_support,
                **ranges,
            )
        except Exception as exc:
            for learner in spec.learners:
                rows.append(
                    TrialRow(learner, n, trial, None, None, 0.0, f"generation: {exc}")
                )
            continue
        config = spec.learner_config(_derived_seed(spec.seed, trial, 2, n))
        for learner in spec.learners:
            start = time.perf_counter()
            try:
                dag_m, cp_m, graph = _run_cell(learner, data, truth, truth_cpdag, config)
            except Exception as exc:
                rows.append(
                    TrialRow(
                        learner, n, trial, None, None,
                        time.perf_counter() - start, str(exc),
                    )
                )
                continue
            rows.append(
                TrialRow(learner, n, trial, dag_m, cp_m, time.perf_counter() - start)
            )
            artifacts.append((f"{cell}/{learner}.json", json.dumps(graph)))
    return rows, artifacts


def run_experiment(spec: ExperimentSpec) -> BenchReport:
    """Execute a sweep and return its report.

    Trials are independent and may run in parallel; rows are gathered in
    (trial, n, learner) order regardless of completion order, so a rerun
    with the same spec reproduces the metrics exactly (wall-clock aside).
    When spec.outdir is set, writes report.csv, summary.csv, and an
    artifacts/ tree of truth and estimate graphs there.

    Raises
    ------
    ValueError
        On an invalid spec.
    OSError
        When the output directory cannot be written.
    """
    outdir = None
    if spec.outdir is not None:
        outdir = Path(spec.outdir)
        (outdir / "artifacts").mkdir(parents=True, exist_ok=True)
    task = partial(_run_trial, spec)
    trials = range(spec.trials)
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            parts = list(pool.map(task, trials))
    else:
        parts = [task(t) for t in trials]
    rows: list[TrialRow] = []
    for part_rows, artifacts in parts:
        rows.extend(part_rows)
        if outdir is not None:
            for rel, payload in artifacts:
                target = outdir / "artifacts" / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(payload)
    report = BenchReport(spec, tuple(rows))
    if outdir is not None:
        (outdir / "report.csv").write_text(report_csv(report))
        (outdir / "summary.csv").write_text(summary_csv(summarize(report)))
    return report


def _mean_se(values):
    if not values:
        return None, None
    if len(values) == 1:
        return values[0], None
    return statistics.fmean(values), statistics.stdev(values) / math.sqrt(len(values))


def summarize(report: BenchReport):
    """Mean and standard error per (learner, n) cell.

    Only non-failed rows contribute; failure counts are carried per cell.

    Raises
    ------
    ValueError
        If the report has no rows.
    """
    if not report.rows:
        raise ValueError("report is empty")
    out = []
    for learner in report.spec.learners:
        for n in report.spec.n_grid:
            cell = [r for r in report.rows if r.learner == learner and r.n == n]
            ok = [r for r in cell if r.failure is None]
            stats = []
            for kind in ("dag", "cpdag"):
                for metric in ("precision", "recall"):
                    vals = [
                        getattr(getattr(r, kind), metric)
                        for r in ok
                        if getattr(r, kind) is not None
                    ]
                    stats.extend(_mean_se(vals))
            out.append(SummaryRow(learner, n, len(cell), len(cell) - len(ok), *stats))
    return tuple(out)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def report_csv(report: BenchReport) -> str:
    header = (
        "learner,n,trial,dag_tp,dag_estimated,dag_true,dag_precision,dag_recall,"
        "cpdag_tp,cpdag_estimated,cpdag_true,cpdag_precision,cpdag_recall,"
        "seconds,failure"
    )
    lines = [header]
    for r in report.rows:
        parts = [r.learner, r.n, r.trial]
        for m in (r.dag, r.cpdag):
            if m is None:
                parts.extend([None] * 5)
            else:
                parts.extend([m.tp, m.n_estimated, m.n_true, m.precision, m.recall])
        parts.append(r.seconds)
        parts.append(r.failure.replace(",", ";").replace("\n", " ") if r.failure else None)
        lines.append(",".join(_csv_cell(v) for v in parts))
    return "\n".join(lines) + "\n"


def summary_csv(rows) -> str:
    header = (
        "learner,n,trials,failures,dag_precision,dag_precision_se,"
        "dag_recall,dag_recall_se,cpdag_precision,cpdag_precision_se,"
        "cpdag_recall,cpdag_recall_se"
    )
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                _csv_cell(getattr(r, f.name)) for f in fields(SummaryRow)
            )
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RuntimeTable:
    """Wall-clock of the ordering learner across graph sizes.

    rows hold (p, mean seconds, median seconds); slope is the least
    squares slope of log median-seconds against log p, or None when the
    grid has a single point.
    """

    rows: tuple
    slope: float | None


def runtime_scaling(
    p_grid,
    n: int = 500,
    d: int = 5,
    trials: int = 3,
    seed: int = 0,
    intercept_range=(0.5, 1.5),
    weight_range=(0.05, 0.2),
    max_retries: int = 3000,
    config: LearnerConfig | None = None,
) -> RuntimeTable:
    """Time mrs_learn over an ascending grid of graph sizes.

    Data generation is excluded from the clock. The default weight range
    is deliberately weak so that dense graphs stay inside the count caps
    at every p in the grid.

    Raises
    ------
    ValueError
        If the grid is not strictly ascending or a size is not above d.
    """
    p_grid = tuple(int(p) for p in p_grid)
    if not p_grid or any(b <= a for a, b in zip(p_grid, p_grid[1:])):
        raise ValueError("p_grid must be nonempty and strictly ascending")
    rows = []
    for p in p_grid:
        if d >= p:
            raise ValueError(f"need d < p, got d={d}, p={p}")
        times = []
        for trial in range(trials):
            dag = random_dag(p, d, seed=_derived_seed(seed, p, trial, 0))
            _, data, _ = generate_sem_dataset(
                dag,
                n,
                seed=_derived_seed(seed, p, trial, 1),
                intercept_range=intercept_range,
                weight_range=weight_range,
                max_retries=max_retries,
            )
            cfg = config if config is not None else LearnerConfig(seed=trial)
            start = time.perf_counter()
            mrs_learn(data, cfg)
            times.append(time.perf_counter() - start)
        rows.append((p, statistics.fmean(times), statistics.median(times)))
    slope = None
    if len(rows) > 1:
        lp = np.log([r[0] for r in rows])
        lt = np.log([r[2] for r in rows])
        slope = float(np.polyfit(lp, lt, 1)[0])
    return RuntimeTable(tuple(rows), slope)
