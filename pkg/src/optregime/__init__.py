"""Penalized two-step estimation and inference for optimal binary treatment regimes."""

from .inference import (
    CovarianceBlocks,
    ValueEstimate,
    VarianceComponents,
    compute_sigma22,
    estimate_sigma2,
    estimate_value,
    value_report,
    value_variance,
)
from .penalty import (
    PenaltyFamily,
    PenaltySpec,
    condition1_audit,
    penalty_derivative,
    penalty_value,
)
from .regime import (
    Dataset,
    PhiMode,
    PropensityMode,
    RegimeEstimate,
    decide,
    fit_regime,
    residualize,
)
from .simulate import (
    Covariance,
    DeviationReport,
    GroundTruth,
    MetricsSummary,
    Model,
    Signal,
    SimulationScenario,
    SparseCoef,
    compute_metrics,
    deviation_experiment,
    generate_dataset,
    monte_carlo_value,
    run_study,
)
from .solver import (
    CvReport,
    DesignMatrix,
    FitResult,
    PenalizedProblem,
    SolverOptions,
    cross_validate,
    fit_lambda_path,
    fit_penalized_logistic,
    fit_penalized_ls,
    logistic_problem,
    ls_problem,
    smooth_loss_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceBlocks",
    "Covariance",
    "CvReport",
    "Dataset",
    "DesignMatrix",
    "DeviationReport",
    "FitResult",
    "GroundTruth",
    "MetricsSummary",
    "Model",
    "PenalizedProblem",
    "PenaltyFamily",
    "PenaltySpec",
    "PhiMode",
    "PropensityMode",
    "RegimeEstimate",
    "Signal",
    "SimulationScenario",
    "SolverOptions",
    "SparseCoef",
    "ValueEstimate",
    "VarianceComponents",
    "compute_metrics",
    "compute_sigma22",
    "condition1_audit",
    "cross_validate",
    "decide",
    "deviation_experiment",
    "estimate_sigma2",
    "estimate_value",
    "fit_lambda_path",
    "fit_penalized_logistic",
    "fit_penalized_ls",
    "fit_regime",
    "generate_dataset",
    "logistic_problem",
    "ls_problem",
    "monte_carlo_value",
    "penalty_derivative",
    "penalty_value",
    "residualize",
    "run_study",
    "smooth_loss_gradient",
    "value_report",
    "value_variance",
    "__version__",
]
