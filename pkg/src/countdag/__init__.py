"""Structure learning for multivariate count data.

Recovers sparse directed graphs from counts by ordering nodes with an
overdispersion score (the ratio of a column's second moment to the one
its fitted conditional mean implies) and reading parents off penalized
Poisson regressions. Ships the synthetic-data generators, reference
learners, and benchmark harness used to evaluate it.
"""

from .baselines import UndirectedGraph, oracle_learn, pmrf_learn, pmrf_neighborhoods
from .bench import (
    BenchReport,
    ExperimentSpec,
    RuntimeTable,
    SummaryRow,
    TrialRow,
    load_spec,
    run_experiment,
    runtime_scaling,
    summarize,
)
from .graphs import (
    Cpdag,
    Dag,
    StructureMetrics,
    cpdag_metrics,
    cpdag_of,
    edge_metrics,
    random_dag,
    topological_order,
)
from .lasso import (
    DEFAULT_OPTIONS,
    ConvergenceError,
    CvResult,
    DegenerateFoldError,
    DivergenceError,
    LambdaPath,
    LassoFit,
    LassoProblem,
    SolverOptions,
    cv_select,
    fit_poisson_lasso,
    lambda_max,
    lambda_path,
)
from .scoring import (
    DegenerateColumnError,
    LearnError,
    LearnerConfig,
    MrsResult,
    ScoreEntry,
    ScoreTable,
    mrs_learn,
    score_first,
    score_step,
    select_parents,
)
from .simulate import (
    CountCapError,
    CountMatrix,
    IdentityLinkModel,
    NegativeRateError,
    PoissonSem,
    RegenerationError,
    UninformativeColumnError,
    generate_identity_dataset,
    generate_sem_dataset,
    random_identity_params,
    random_sem_params,
    sample_identity_link,
    sample_sem,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BenchReport",
    "ConvergenceError",
    "CountCapError",
    "CountMatrix",
    "Cpdag",
    "CvResult",
    "Dag",
    "DegenerateColumnError",
    "DegenerateFoldError",
    "ExperimentSpec",
    "IdentityLinkModel",
    "LassoFit",
    "LambdaPath",
    "DivergenceError",
    "DEFAULT_OPTIONS",
    "LassoProblem",
    "LearnError",
    "LearnerConfig",
    "MrsResult",
    "NegativeRateError",
    "PoissonSem",
    "RegenerationError",
    "RuntimeTable",
    "ScoreEntry",
    "ScoreTable",
    "SolverOptions",
    "StructureMetrics",
    "SummaryRow",
    "TrialRow",
    "UndirectedGraph",
    "UninformativeColumnError",
    "cpdag_metrics",
    "cpdag_of",
    "cv_select",
    "edge_metrics",
    "fit_poisson_lasso",
    "generate_identity_dataset",
    "generate_sem_dataset",
    "lambda_path",
    "lambda_max",
    "load_spec",
    "mrs_learn",
    "oracle_learn",
    "pmrf_learn",
    "pmrf_neighborhoods",
    "random_dag",
    "random_identity_params",
    "random_sem_params",
    "run_experiment",
    "runtime_scaling",
    "sample_identity_link",
    "sample_sem",
    "score_first",
    "score_step",
    "select_parents",
    "summarize",
    "topological_order",
]
