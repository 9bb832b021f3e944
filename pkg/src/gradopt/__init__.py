"""Derivative-free graduated optimization (GradOpt), baselines, and a benchmark harness."""

from .baselines import AdaLipoConfig, estimate_lipschitz, run_adalipo, run_prs
from .core import (
    Box,
    EpochSchedule,
    GradOptConfig,
    RunResult,
    SfogdState,
    estimate_gradient,
    make_epoch_schedule,
    make_rng,
    project_box,
    run_gradopt,
    sfogd_step,
    smoothed_value,
)
from .errors import (
    ConfigError,
    EvaluationFailedError,
    GradOptError,
    IngestionError,
    InvalidArgumentError,
    MetricUndefinedError,
    NumericError,
)
from .objectives import (
    Dataset,
    FoldSplit,
    KrrHyperparams,
    Objective,
    eval_synthetic,
    krr_cv_score,
    load_dataset,
    make_folds,
    solve_weighted_krr,
)

__version__ = "0.1.0"
