"""Meta-analysis toolkit: pooling, publication-bias correction, and
moderator analysis for effect-size datasets.

The pipeline mirrors a complete quantitative literature review: load and
validate estimates, filter extreme outliers, pool with precision
weights and cluster-robust uncertainty, weigh a 20-model Bayesian
ensemble of publication-bias corrections, screen moderators by exhaustive
model averaging, and fit a multilevel meta-regression.
"""

from .dataset import (
    DescribeRow,
    EffectEstimate,
    MetaDataset,
    ModeratorSchema,
    describe,
    filter_outliers,
    load_csv,
    load_schema,
    write_csv,
)
from .errors import (
    BudgetError,
    ConvergenceError,
    DegenerateEnsembleError,
    DomainError,
    InsufficientDataError,
    MetaInferError,
    NumericalError,
    ParseError,
    RankDeficiencyError,
    SchemaError,
    ValidationError,
)
from .metareg import MetaRegressionResult, design_matrix, fit_metareg
from .pooling import FunnelTable, PooledEstimate, funnel_data, uwls
from .screen import ScreenConfig, ScreenResult, screen_moderators
from .selection import (
    AveragedPosterior,
    EnsembleConfig,
    EnsembleResult,
    PriorConfig,
    SamplerConfig,
    WeightFunction,
    average_ensemble,
    build_model_space,
    fit_ensemble,
    log_marginal_likelihood,
)
from .simulate import SimConfig, SimDiagnostics, simulate, simulate_with_diagnostics

__version__ = "0.1.0"

__all__ = [
    "AveragedPosterior",
    "BudgetError",
    "ConvergenceError",
    "DegenerateEnsembleError",
    "DescribeRow",
    "DomainError",
    "EffectEstimate",
    "EnsembleConfig",
    "EnsembleResult",
    "FunnelTable",
    "InsufficientDataError",
    "MetaDataset",
    "MetaInferError",
    "MetaRegressionResult",
    "ModeratorSchema",
    "NumericalError",
    "ParseError",
    "PooledEstimate",
    "PriorConfig",
    "RankDeficiencyError",
    "SamplerConfig",
    "SchemaError",
    "ScreenConfig",
    "ScreenResult",
    "SimConfig",
    "SimDiagnostics",
    "ValidationError",
    "WeightFunction",
    "average_ensemble",
    "build_model_space",
    "describe",
    "design_matrix",
    "filter_outliers",
    "fit_ensemble",
    "fit_metareg",
    "funnel_data",
    "load_csv",
    "load_schema",
    "log_marginal_likelihood",
    "screen_moderators",
    "simulate",
    "simulate_with_diagnostics",
    "uwls",
    "write_csv",
]
