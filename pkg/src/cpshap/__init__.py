"""Feature attributions for conformal prediction intervals.

The package splits a conformal interval property — its width, lower, or
upper bound — across input features by treating feature subsets as
cooperating players: each coalition gets its own retrained and calibrated
predictor, and the induced cooperative game is allocated exactly (via
Harsanyi dividends) or by sampled random orderings.
"""

from .exceptions import (
    CPShapError,
    DataFormatError,
    DegenerateBaselineError,
    DegenerateWeightsError,
    DimensionError,
    EmptyDataError,
    IncompleteDividendsError,
    InsufficientCalibrationError,
    ParameterError,
    SplitError,
    SupportMismatchError,
)
from .games import CoalitionGame, coalition_of, coalitions_all, full_coalition, members_of
from .allocation import (
    AllocationVector,
    RandomOrderDistribution,
    dividends_dense,
    harsanyi_dividends,
    importance_reweight,
    mobius_reconstruct,
    proportional_shapley_exact,
    shapley_exact,
    weber_mc_estimate,
)
from .regressors import FittedModel, RegressorSpec, train, train_dispersion, train_quantile
from .conformal import (
    ConformalPredictor,
    CoverageReport,
    Interval,
    SplitData,
    calibrate,
    coverage_audit,
    interval_bounds,
    predict_interval,
    split,
)
from .attribution import (
    AttributionConfig,
    AttributionResult,
    CoalitionModelCache,
    ConformalAttributor,
    attribute_exact,
    attribute_mc,
    coalition_value,
    compare_allocations,
    normalize,
    rank_frequency,
)
from .dataio import Dataset, dataset_from_arrays, load_csv
from .synthbench import (
    FriedmanVariantSpec,
    SobolLevitanSpec,
    convergence_study,
    gen_friedman_variant,
    gen_sobol_levitan,
    run_friedman_comparison,
    run_sobol_convergence,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "CPShapError",
    "DataFormatError",
    "DegenerateBaselineError",
    "DegenerateWeightsError",
    "DimensionError",
    "EmptyDataError",
    "IncompleteDividendsError",
    "InsufficientCalibrationError",
    "ParameterError",
    "SplitError",
    "SupportMismatchError",
    # games and allocations
    "CoalitionGame",
    "coalition_of",
    "coalitions_all",
    "full_coalition",
    "members_of",
    "AllocationVector",
    "RandomOrderDistribution",
    "dividends_dense",
    "harsanyi_dividends",
    "importance_reweight",
    "mobius_reconstruct",
    "proportional_shapley_exact",
    "shapley_exact",
    "weber_mc_estimate",
    # models
    "FittedModel",
    "RegressorSpec",
    "train",
    "train_dispersion",
    "train_quantile",
    # conformal prediction
    "ConformalPredictor",
    "CoverageReport",
    "Interval",
    "SplitData",
    "calibrate",
    "coverage_audit",
    "interval_bounds",
    "predict_interval",
    "split",
    # attribution pipeline
    "AttributionConfig",
    "AttributionResult",
    "CoalitionModelCache",
    "ConformalAttributor",
    "attribute_exact",
    "attribute_mc",
    "coalition_value",
    "compare_allocations",
    "normalize",
    "rank_frequency",
    # data and benchmarks
    "Dataset",
    "dataset_from_arrays",
    "load_csv",
    "FriedmanVariantSpec",
    "SobolLevitanSpec",
    "convergence_study",
    "gen_friedman_variant",
    "gen_sobol_levitan",
    "run_friedman_comparison",
    "run_sobol_convergence",
]
