"""ScalePal - A CLI toolkit for Dense and Mixture-of-Experts scaling laws."""

__version__ = "0.1.0"
__author__ = "Your Name"
__email__ = "your.email@example.com"

from scalepal.allocation import (
    AllocationPolicy,
    brute_force_allocate,
    compare_architectures,
    data_efficiency,
    derive_policy,
    optimal_point,
)
from scalepal.error_handler import ErrorHandler, exit_code_for, suggest_fix
from scalepal.exceptions import (
    AnalysisRefused,
    InputError,
    ScalePalError,
    SchemaError,
    ValidationError,
)
from scalepal.fit_engine import FitOptions, FitProblem, FitResult, PowerLawFit, fit, fit_power_law
from scalepal.hparam_scaling import (
    LrBatchRelation,
    adam_opt_lr,
    estimate_noise_scale,
    extract_contour_minima,
    fit_bopt_law,
    fit_epsopt_law,
    interval_overlap,
    sgd_opt_lr,
)
from scalepal.loss_laws import (
    ClarkSeparableCoefficients,
    DenseLawCoefficients,
    MoeLawCoefficients,
    QuadraticInteractionCoefficients,
    extrapolate,
    fit_loss_law,
    predict,
)
from scalepal.models import RunSet, RunSeries, TrainingRecord
from scalepal.parser import create_parser
from scalepal.run_data import derive_scale, load_runs, save_runs
from scalepal.synthgen import SynthSpec, generate_heatmap, generate_runs

__all__ = [
    "create_parser",
    "TrainingRecord",
    "RunSeries",
    "RunSet",
    "load_runs",
    "save_runs",
    "derive_scale",
    "FitProblem",
    "FitOptions",
    "FitResult",
    "PowerLawFit",
    "fit",
    "fit_power_law",
    "DenseLawCoefficients",
    "MoeLawCoefficients",
    "ClarkSeparableCoefficients",
    "QuadraticInteractionCoefficients",
    "predict",
    "fit_loss_law",
    "extrapolate",
    "AllocationPolicy",
    "derive_policy",
    "optimal_point",
    "brute_force_allocate",
    "compare_architectures",
    "data_efficiency",
    "LrBatchRelation",
    "estimate_noise_scale",
    "extract_contour_minima",
    "fit_bopt_law",
    "fit_epsopt_law",
    "sgd_opt_lr",
    "adam_opt_lr",
    "interval_overlap",
    "SynthSpec",
    "generate_runs",
    "generate_heatmap",
    "ScalePalError",
    "InputError",
    "AnalysisRefused",
    "ValidationError",
    "SchemaError",
    "ErrorHandler",
    "exit_code_for",
    "suggest_fix",
]
