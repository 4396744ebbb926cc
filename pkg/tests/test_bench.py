"""Tests for the benchmark harness.

Exercises spec parsing and validation, row accounting, failure capture,
artifact auditability, determinism, aggregation arithmetic, and the
runtime-scaling table on small seeded sweeps.
"""

import json
import statistics
from pathlib import Path

import pytest

from countdag.bench import (
    BenchReport,
    ExperimentSpec,
    SummaryRow,
    TrialRow,
    load_spec,
    report_csv,
    run_experiment,
    runtime_scaling,
    summarize,
    summary_csv,
)
from countdag.graphs import Dag, StructureMetrics, edge_metrics

SMALL = dict(
    p=5,
    d=1,
    n_grid=(50, 400),
    trials=2,
    learners=("mrs", "oracle", "pmrf"),
    intercept_range=(0.5, 1.5),
    weight_range=(0.4, 0.8),
    max_retries=500,
    min_support=2,
    seed=7,
)


def test_spec_validation():
    good = dict(p=4, d=1, n_grid=(100,), trials=1)
    ExperimentSpec(**good)
    for bad in [
        dict(p=1),
        dict(d=4),
        dict(d=-1),
        dict(n_grid=()),
        dict(n_grid=(0,)),
        dict(trials=0),
        dict(learners=()),
        dict(learners=("mrs", "ges")),
        dict(model="probit"),
        dict(seed=-1),
        dict(jobs=0),
        dict(folds=1),
    ]:
        with pytest.raises(ValueError):
            ExperimentSpec(**{**good, **bad})


def test_spec_normalizes_sequences():
    spec = ExperimentSpec(
        p=4,
        d=1,
        n_grid=[100, 200],
        trials=1,
        learners=["mrs"],
        weight_range=[1, 2],
    )
    assert spec.n_grid == (100, 200)
    assert spec.learners == ("mrs",)
    assert spec.weight_range == (1.0, 2.0)


def test_load_spec_files(tmp_path):
    doc = {"p": 6, "d": 2, "n_grid": [40], "trials": 2, "learners": ["mrs", "pmrf"]}
    jpath = tmp_path / "spec.json"
    jpath.write_text(json.dumps(doc))
    spec = load_spec(jpath)
    assert (spec.p, spec.d, spec.n_grid, spec.trials) == (6, 2, (40,), 2)
    assert spec.learners == ("mrs", "pmrf")

    tpath = tmp_path / "spec.toml"
    tpath.write_text('p = 6\nd = 2\nn_grid = [40]\ntrials = 2\nlearners = ["mrs"]\n')
    assert load_spec(tpath).p == 6

    bad = tmp_path / "bad.toml"
    bad.write_text("p = 6\nd = 2\nn_grid = [40]\ntrials = 2\nntrials = 3\n")
    with pytest.raises(ValueError, match="unknown spec keys: ntrials"):
        load_spec(bad)

    scalar = tmp_path / "scalar.json"
    scalar.write_text("[1, 2]")
    with pytest.raises(ValueError, match="table"):
        load_spec(scalar)


def test_bundled_desk_spec_loads():
    from importlib import resources

    path = resources.files("countdag") / "specs" / "fig2_desk.toml"
    spec = load_spec(path)
    assert (spec.p, spec.d) == (20, 1)
    assert spec.n_grid == (25, 100, 250)
    assert spec.trials == 20
    assert spec.learners == ("mrs",)


def test_single_trial_single_row():
    spec = ExperimentSpec(
        p=3,
        d=1,
        n_grid=(500,),
        trials=1,
        intercept_range=(0.5, 1.5),
        weight_range=(0.4, 0.8),
        max_retries=500,
        seed=3,
    )
    rep = run_experiment(spec)
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert (row.learner, row.n, row.trial, row.failure) == ("mrs", 500, 0, None)
    assert row.dag is not None and row.cpdag is not None
    assert row.seconds > 0.0


def test_row_accounting_and_order():
    rep = run_experiment(ExperimentSpec(**SMALL))
    spec = rep.spec
    assert len(rep.rows) == len(spec.learners) * len(spec.n_grid) * spec.trials
    expected = [
        (trial, n, learner)
        for trial in range(spec.trials)
        for n in spec.n_grid
        for learner in spec.learners
    ]
    assert [(r.trial, r.n, r.learner) for r in rep.rows] == expected
    for r in rep.rows:
        assert r.failure is None
        if r.learner == "pmrf":
            assert r.dag is None and r.cpdag is not None
        else:
            assert r.dag is not None and r.cpdag is not None


def test_recall_increases_with_sample_size():
    spec = ExperimentSpec(
        p=20,
        d=1,
        n_grid=(25, 250),
        trials=4,
        intercept_range=(0.5, 1.5),
        weight_range=(0.4, 0.8),
        max_retries=3000,
        min_support=6,
        seed=11,
    )
    by_n = {s.n: s for s in summarize(run_experiment(spec))}
    assert by_n[250].failures == by_n[25].failures == 0
    assert by_n[250].dag_recall > by_n[25].dag_recall + 0.15


def test_learner_failure_recorded_not_fatal():
    # 8 rows are below the fitting floor; the sweep must still finish
    spec = ExperimentSpec(
        p=5,
        d=1,
        n_grid=(8,),
        trials=2,
        learners=("mrs", "oracle"),
        max_retries=500,
        seed=5,
    )
    rep = run_experiment(spec)
    assert len(rep.rows) == 4
    assert rep.failures() == 4
    for r in rep.rows:
        assert r.dag is None and r.cpdag is None
        assert "rows" in r.failure
    for s in summarize(rep):
        assert s.failures == 2 and s.dag_recall is None


def test_generation_failure_recorded_not_fatal():
    spec = ExperimentSpec(
        p=5, d=1, n_grid=(8,), trials=1, min_support=9, max_retries=50, seed=5
    )
    rep = run_experiment(spec)
    assert len(rep.rows) == 1
    assert rep.rows[0].failure.startswith("generation:")


def test_artifacts_allow_metric_audit(tmp_path):
    spec = ExperimentSpec(**{**SMALL, "n_grid": (400,), "outdir": str(tmp_path)})
    rep = run_experiment(spec)
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "summary.csv").exists()
    for r in rep.rows:
        cell = tmp_path / "artifacts" / f"trial{r.trial:03d}_n{r.n}"
        truth = Dag.from_json((cell / "truth.json").read_text())
        est = json.loads((cell / f"{r.learner}.json").read_text())
        if r.learner == "pmrf":
            skel = frozenset(tuple(e) for e in est["undirected"])
            tp = len(skel & truth.skeleton())
            redone = StructureMetrics.from_counts(tp, len(skel), len(truth.skeleton()))
            assert redone == r.cpdag
        else:
            redone = edge_metrics(Dag.from_dict(est), truth)
            assert redone == r.dag


def test_rerun_reproduces_metrics():
    spec = ExperimentSpec(**{**SMALL, "trials": 1})
    a, b = run_experiment(spec), run_experiment(spec)
    assert [(r.learner, r.n, r.trial, r.dag, r.cpdag, r.failure) for r in a.rows] == [
        (r.learner, r.n, r.trial, r.dag, r.cpdag, r.failure) for r in b.rows
    ]
    assert summary_csv(summarize(a)) == summary_csv(summarize(b))


def test_summarize_hand_arithmetic():
    spec = ExperimentSpec(p=4, d=1, n_grid=(100,), trials=3, seed=0)
    m = [StructureMetrics.from_counts(t, 4, 4) for t in (4, 2, 3)]
    rows = tuple(
        TrialRow("mrs", 100, i, m[i], m[i], 0.1) for i in range(3)
    )
    (s,) = summarize(BenchReport(spec, rows))
    vals = [1.0, 0.5, 0.75]
    assert s.trials == 3 and s.failures == 0
    assert s.dag_recall == pytest.approx(statistics.fmean(vals))
    assert s.dag_recall_se == pytest.approx(statistics.stdev(vals) / 3**0.5)
    assert s.cpdag_precision == s.dag_precision


def test_summarize_edge_cases():
    spec = ExperimentSpec(p=4, d=1, n_grid=(100,), trials=1, seed=0)
    m = StructureMetrics.from_counts(2, 2, 4)
    (s,) = summarize(BenchReport(spec, (TrialRow("mrs", 100, 0, m, m, 0.1),)))
    assert s.dag_recall == 0.5 and s.dag_recall_se is None

    spec2 = ExperimentSpec(p=4, d=1, n_grid=(100,), trials=2, seed=0)
    rows = tuple(TrialRow("mrs", 100, i, m, m, 0.1) for i in range(2))
    (s2,) = summarize(BenchReport(spec2, rows))
    assert s2.dag_recall_se == 0.0

    with pytest.raises(ValueError, match="empty"):
        summarize(BenchReport(spec, ()))


def test_csv_shapes():
    rep = run_experiment(ExperimentSpec(**{**SMALL, "trials": 1, "n_grid": (50,)}))
    lines = report_csv(rep).strip().splitlines()
    assert lines[0].startswith("learner,n,trial,dag_tp")
    assert len(lines) == 1 + len(rep.rows)
    assert all(line.count(",") == lines[0].count(",") for line in lines)
    slines = summary_csv(summarize(rep)).strip().splitlines()
    assert len(slines) == 1 + len(rep.spec.learners)
    # pmrf has no directed metrics: empty cells, never zeros
    pm = next(line for line in slines if line.startswith("pmrf"))
    assert ",,,," in pm


def test_runtime_scaling_smoke():
    table = runtime_scaling((4, 8), n=150, d=1, trials=1, seed=0)
    assert [r[0] for r in table.rows] == [4, 8]
    assert all(r[1] > 0 and r[2] > 0 for r in table.rows)
    assert table.slope is not None


def test_runtime_scaling_single_point_has_no_slope():
    table = runtime_scaling((5,), n=120, d=1, trials=1, seed=0)
    assert len(table.rows) == 1
    assert table.slope is None


def test_runtime_scaling_rejects_bad_grid():
    with pytest.raises(ValueError, match="ascending"):
        runtime_scaling((10, 10), n=100, d=1, trials=1)
    with pytest.raises(ValueError, match="ascending"):
        runtime_scaling((), n=100, d=1, trials=1)
    with pytest.raises(ValueError, match="d < p"):
        runtime_scaling((4, 8), n=100, d=4, trials=1)
