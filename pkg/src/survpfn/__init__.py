"""Amortized Bayesian survival inference with prior-data fitted networks.

A desk-scale, fully deterministic stack: synthetic right-censored task
generation from random-MLP priors, a small numpy transformer that emits
histogram survival predictions in context, survival metrics with
censoring-aware scoring, identifiability diagnostics, and a seeded
benchmark protocol.
"""

from .bench import (
    BenchConfig,
    DatasetSpec,
    KmBaseline,
    ModelSpec,
    PfnCheckpointModel,
    bootstrap_median_rank,
    continuous_grid,
    evaluate_run,
    quantile_grid,
    rank_models,
    run_bench,
)
from .data import Preprocessor, SurvivalDataset, load_dataset, split
from .diagnostics import (
    conditional_entropy,
    curve_bands,
    estimate_cmi,
    observed_dispersion,
    task_diagnostics,
)
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .metrics import (
    KmEstimate,
    SurvivalCurve,
    concordance_index,
    d_calibration,
    integrated_brier,
    km_estimate,
    log_rank,
    mae_po,
    median_survival_time,
)
from .model import (
    ModelConfig,
    SurvivalPFN,
    load_checkpoint,
    predict_survival,
    save_checkpoint,
)
from .prior import (
    DgpSpec,
    PriorConfig,
    SimpleExponentialPrior,
    SyntheticPrior,
    TaskSample,
    calibrate_censoring_rate,
    sample_dgp,
    sample_task,
)
from .rng import RngStream, splitmix64
from .timewarp import fit_transform, make_binner
from .train import TrainConfig, select_checkpoint, train, weighted_ibs

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DatasetSpec",
    "DgpSpec",
    "KmBaseline",
    "KmEstimate",
    "ModelConfig",
    "ModelSpec",
    "NumericError",
    "PfnCheckpointModel",
    "Preprocessor",
    "PriorConfig",
    "RngStream",
    "SimpleExponentialPrior",
    "SurvivalCurve",
    "SurvivalDataset",
    "SurvivalPFN",
    "SyntheticPrior",
    "TaskSample",
    "TrainConfig",
    "bootstrap_median_rank",
    "calibrate_censoring_rate",
    "concordance_index",
    "conditional_entropy",
    "continuous_grid",
    "curve_bands",
    "d_calibration",
    "estimate_cmi",
    "evaluate_run",
    "fit_transform",
    "integrated_brier",
    "km_estimate",
    "load_checkpoint",
    "load_dataset",
    "log_rank",
    "mae_po",
    "make_binner",
    "median_survival_time",
    "observed_dispersion",
    "predict_survival",
    "quantile_grid",
    "rank_models",
    "run_bench",
    "sample_dgp",
    "sample_task",
    "save_checkpoint",
    "select_checkpoint",
    "split",
    "splitmix64",
    "task_diagnostics",
    "train",
    "weighted_ibs",
    "__version__",
]
