"""Command-line entry point.

Four subcommands: simulate writes a seeded synthetic dataset with its
generating graph and parameters, fit runs a learner on a CSV of counts,
bench executes a sweep described by a TOML or JSON spec file, and eval
compares two graph JSON files. Exit codes: 0 on success, 1 when the
work itself fails (solver, generation, IO), 2 on usage and validation
errors, including malformed input files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import UndirectedGraph, oracle_learn, pmrf_learn
from .bench import ExperimentSpec, load_spec, run_experiment, summarize, summary_csv
from .graphs import (
    Cpdag,
    Dag,
    StructureMetrics,
    cpdag_metrics,
    cpdag_of,
    edge_metrics,
    random_dag,
)
from .scoring import LearnerConfig, mrs_learn
from .simulate import (
    GENERATOR_NAME,
    CountMatrix,
    generate_identity_dataset,
    generate_sem_dataset,
)

__all__ = ["main"]


class UsageError(Exception):
    """Bad arguments or unreadable/invalid input files; exits with 2."""


def _default_jobs() -> int:
    raw = os.environ.get("COUNTDAG_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _derived_seed(*entries) -> int:
    return int(np.random.SeedSequence(list(entries)).generate_state(1)[0])


def _add_seed(sub):
    sub.add_argument("--seed", type=int, default=0, help="master seed (default 0)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countdag",
        description="Structure learning for multivariate count data.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="write a synthetic count dataset")
    sim.add_argument("--p", type=int, required=True, help="node count")
    sim.add_argument("--d", type=int, required=True, help="max indegree")
    sim.add_argument("--n", type=int, required=True, help="sample size")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--model", choices=("log", "identity"), default="log")
    sim.add_argument(
        "--intercept-range", type=float, nargs=2, metavar=("LO", "HI"), default=None
    )
    sim.add_argument(
        "--weight-range", type=float, nargs=2, metavar=("LO", "HI"), default=None
    )
    sim.add_argument("--max-retries", type=int, default=100)
    sim.add_argument("--min-support", type=int, default=1)
    sim.add_argument("--verbose", action="store_true")
    _add_seed(sim)
    sim.set_defaults(func=cmd_simulate)

    fit = subs.add_parser("fit", help="fit a learner to a CSV of counts")
    fit.add_argument("data", help="CSV with a header row and integer cells")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--learner", choices=("mrs", "pmrf", "oracle"), default="mrs")
    fit.add_argument("--truth", default=None, help="truth graph JSON (oracle only)")
    fit.add_argument(
        "--folds", default="5", help="CV folds, an integer >= 2 or 'loo'"
    )
    fit.add_argument("--verbose", action="store_true")
    _add_seed(fit)
    fit.add_argument(
        "--jobs",
        type=int,
        default=_default_jobs(),
        help="parallel workers (default $COUNTDAG_JOBS or 1)",
    )
    fit.set_defaults(func=cmd_fit)

    ben = subs.add_parser("bench", help="run a benchmark sweep from a spec file")
    ben.add_argument("--spec", required=True, help="TOML or JSON spec path")
    ben.add_argument("--outdir", default=None, help="override the spec outdir")
    ben.add_argument("--trials", type=int, default=None, help="override trials")
    ben.add_argument(
        "--dry-run", action="store_true", help="validate and print the plan only"
    )
    ben.add_argument("--seed", type=int, default=None, help="override the spec seed")
    ben.add_argument("--jobs", type=int, default=None, help="override spec jobs")
    ben.set_defaults(func=cmd_bench)

    ev = subs.add_parser("eval", help="compare an estimated graph JSON to a reference")
    ev.add_argument("estimated")
    ev.add_argument("truth")
    ev.add_argument(
        "--level",
        choices=("auto", "dag", "cpdag", "skeleton"),
        default="auto",
        help="comparison level (auto: dag when both are directed, else skeleton)",
    )
    ev.set_defaults(func=cmd_eval)
    return parser


def cmd_simulate(args) -> int:
    if args.p < 2:
        raise UsageError("--p must be >= 2")
    if not 0 <= args.d < args.p:
        raise UsageError(f"need 0 <= d < p, got d={args.d}, p={args.p}")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    if args.max_retries < 1:
        raise UsageError("--max-retries must be >= 1")
    if not 1 <= args.min_support <= args.n:
        raise UsageError("--min-support must be between 1 and n")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dag = random_dag(args.p, args.d, seed=_derived_seed(args.seed, 0))
    generate = generate_sem_dataset if args.model == "log" else generate_identity_dataset
    ranges = {}
    if args.intercept_range is not None:
        ranges["intercept_range"] = tuple(args.intercept_range)
    if args.weight_range is not None:
        ranges["weight_range"] = tuple(args.weight_range)
    model, data, retries = generate(
        dag,
        args.n,
        seed=_derived_seed(args.seed, 1),
        max_retries=args.max_retries,
        min_support=args.min_support,
        **ranges,
    )
    data.to_csv(out / "data.csv")
    (out / "truth.json").write_text(dag.to_json())
    params = {
        "family": args.model,
        "generator": GENERATOR_NAME,
        "seed": args.seed,
        "retries": retries,
        "model": model.to_dict(),
    }
    (out / "params.json").write_text(json.dumps(params, sort_keys=True))
    print(f"wrote {out / 'data.csv'} ({data.n} rows, {data.p} columns)")
    if args.verbose:
        print(f"truth has {len(dag.edges)} edges; {retries} parameter redraws")
    return 0


def _parse_folds(raw: str, n: int) -> tuple[int, int | None]:
    """(folds, min_rows) from a '--folds' value; 'loo' means leave-one-out."""
    if raw.strip().lower() == "loo":
        return n, n
    try:
        folds = int(raw)
    except ValueError:
        raise UsageError(f"--folds must be an integer >= 2 or 'loo', got {raw!r}")
    if folds < 2:
        raise UsageError("--folds must be >= 2")
    return folds, None


def cmd_fit(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        full = CountMatrix.from_csv(path)
    except ValueError as exc:
        raise UsageError(f"bad input CSV: {exc}")

    values = np.asarray(full.values)
    constant = [j for j in range(full.p) if np.all(values[:, j] == values[0, j])]
    kept = [j for j in range(full.p) if j not in constant]
    for j in constant:
        print(
            f"warning: column {full.labels[j]!r} is constant "
            f"(value {int(values[0, j])}); excluded from learning",
            file=sys.stderr,
        )
    if not kept:
        raise UsageError("every column is constant; nothing to learn")
    data = CountMatrix(values[:, kept], tuple(full.labels[j] for j in kept))
    names = data.labels

    folds, min_rows = _parse_folds(args.folds, data.n)
    config = LearnerConfig(
        folds=folds, min_rows=min_rows, seed=args.seed, jobs=args.jobs
    )

    truth = None
    if args.learner == "oracle":
        if args.truth is None:
            raise UsageError("--learner oracle requires --truth")
        if constant:
            raise UsageError(
                "oracle cannot be used when columns were excluded; "
                "remove constant columns from the CSV and the truth graph first"
            )
        truth = _load_dag(args.truth)
        if truth.p != data.p:
            raise UsageError(
                f"truth graph has {truth.p} nodes but data has {data.p} columns"
            )
    elif args.truth is not None:
        raise UsageError("--truth only applies to --learner oracle")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.learner == "pmrf":
        graph = pmrf_learn(data, config)
        payload = graph_doc = graph.to_dict()
        pairs = [(names[a - 1], names[b - 1]) for a, b in sorted(graph.edges)]
        edge_header = "node_a,node_b"
        print(f"pmrf: {len(pairs)} undirected edges on {data.p} columns")
    else:
        learn = mrs_learn if args.learner == "mrs" else (
            lambda d, c: oracle_learn(d, truth, c)
        )
        result = learn(data, config)
        payload = result.to_dict()
        graph_doc = result.dag.to_dict()
        pairs = [
            (names[j - 1], names[k - 1]) for j, k in sorted(result.dag.edges)
        ]
        edge_header = "parent,child"
        print(
            f"{args.learner}: ordering "
            + " ".join(names[j - 1] for j in result.ordering)
        )
        print(f"{args.learner}: {len(pairs)} directed edges")
    wrapper = {
        "learner": args.learner,
        "columns": list(names),
        "quarantined": [full.labels[j] for j in constant],
        "result": payload,
    }
    (out / "result.json").write_text(json.dumps(wrapper, sort_keys=True))
    (out / "graph.json").write_text(json.dumps(graph_doc, sort_keys=True))
    lines = [edge_header] + [f"{a},{b}" for a, b in pairs]
    (out / "edges.csv").write_text("\n".join(lines) + "\n")
    if args.verbose:
        print(f"wrote result.json, graph.json, edges.csv to {out}")
    return 0


def _load_dag(path) -> Dag:
    kind, g = _load_graph(path)
    if kind != "dag":
        raise UsageError(f"{path} does not hold a purely directed graph")
    return g


def _bundled_spec(name: str):
    from importlib import resources

    candidate = resources.files("countdag") / "specs" / name
    return candidate if candidate.is_file() else None


def cmd_bench(args) -> int:
    path = Path(args.spec)
    if not path.is_file():
        bundled = _bundled_spec(path.name)
        if bundled is None:
            raise UsageError(f"no such spec file: {args.spec}")
        path = bundled
    try:
        spec = load_spec(path)
    except ValueError as exc:
        raise UsageError(f"invalid spec: {exc}")
    overrides = {}
    if args.outdir is not None:
        overrides["outdir"] = args.outdir
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        try:
            spec = dataclasses.replace(spec, **overrides)
        except ValueError as exc:
            raise UsageError(f"invalid spec: {exc}")

    cells = len(spec.learners) * len(spec.n_grid) * spec.trials
    if args.dry_run:
        print(
            f"dry run: {spec.trials} trials x {len(spec.n_grid)} sample sizes "
            f"x {len(spec.learners)} learners = {cells} cells; nothing written"
        )
        return 0
    report = run_experiment(spec)
    print(summary_csv(summarize(report)), end="")
    failures = report.failures()
    if failures:
        print(f"{failures} of {cells} cells failed", file=sys.stderr)
    if spec.outdir is not None:
        print(f"report written to {Path(spec.outdir) / 'report.csv'}")
    return 0


def _load_graph(path):
    """Load a graph JSON as ('dag'|'cpdag'|'undirected', object)."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        doc = json.loads(p.read_text())
        directed = [tuple(e) for e in doc.get("edges", [])]
        undirected = [tuple(e) for e in doc.get("undirected", [])]
        if not undirected:
            return "dag", Dag.from_dict(doc)
        if not directed:
            return "undirected", UndirectedGraph(int(doc["p"]), frozenset(undirected))
        return "cpdag", Cpdag.from_dict(doc)
    except UsageError:
        raise
    except Exception as exc:
        raise UsageError(f"bad graph JSON {path}: {exc}")


def _skeleton(kind, graph) -> frozenset:
    if kind == "undirected":
        return graph.edges
    return graph.skeleton()


def cmd_eval(args) -> int:
    kind_e, est = _load_graph(args.estimated)
    kind_t, truth = _load_graph(args.truth)
    if est.p != truth.p:
        raise UsageError(f"node counts differ: {est.p} vs {truth.p}")
    level = args.level
    if level == "auto":
        level = "dag" if kind_e == kind_t == "dag" else "skeleton"
    if level == "dag":
        if kind_e != "dag" or kind_t != "dag":
            raise UsageError("dag-level comparison needs two directed graphs")
        m = edge_metrics(est, truth)
    elif level == "cpdag":
        def as_cpdag(kind, g):
            if kind == "dag":
                return cpdag_of(g)
            if kind == "undirected":
                return Cpdag(g.p, frozenset(), g.edges)
            return g

        m = cpdag_metrics(as_cpdag(kind_e, est), as_cpdag(kind_t, truth))
    else:
        a, b = _skeleton(kind_e, est), _skeleton(kind_t, truth)
        m = StructureMetrics.from_counts(len(a & b), len(a), len(b))
    print(f"level={level}")
    print(f"tp={m.tp}")
    print(f"estimated={m.n_estimated}")
    print(f"true={m.n_true}")
    print(f"precision={m.precision:.6g}")
    print(f"recall={m.recall:.6g}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
