"""dcfkit: IRT-based detection of group-dependent course difficulty.

Fits Rasch/2PL models to dichotomized grade data, verifies the model
assumptions, screens every course for statistically significant
group-dependent difficulty (with FDR control), and characterizes the
detector's power by simulation.
"""

from .config import RunConfig, RunManifest
from .data import (
    AchievementRates,
    AGPolicy,
    EnrollmentRecord,
    GroupAssignment,
    ParseResult,
    ResponseMatrix,
    achievement_rates,
    build_groups,
    compute_gpa,
    dichotomize,
    iterative_filter,
    matrix_from_dense,
    parse_enrollments,
)
from .dcf import (
    ArDeltaResult,
    DcfFit,
    DcfReport,
    DcfResult,
    ar_delta_test,
    bh_adjust,
    classify_case,
    effect_size_probability,
    fit_dcf,
    lrt_pvalue,
    run_dcf_analysis,
)
from .diagnostics import (
    Q3Report,
    ReliabilityReport,
    SelectionReport,
    ValidityReport,
    bic,
    concurrent_validity,
    q3_statistics,
    select_model,
    split_half_reliability,
)
from .errors import (
    ConfigError,
    DataError,
    DcfkitError,
    FilterError,
    FitError,
    GuardError,
    SchemaError,
)
from .irt import (
    FittedModel,
    ModelSpec,
    TraitEstimates,
    estimate_traits,
    fit,
    irf,
    marginal_log_likelihood,
    projected_difficulty,
    simulate_responses,
)
from .power import (
    FdrReport,
    PowerCell,
    PowerCurve,
    SimConfig,
    estimate_null_fdr,
    run_power_cell,
    run_power_study,
)

__version__ = "0.1.0"

__all__ = [
    "AGPolicy",
    "AchievementRates",
    "ArDeltaResult",
    "ConfigError",
    "DataError",
    "DcfFit",
    "DcfReport",
    "DcfResult",
    "DcfkitError",
    "EnrollmentRecord",
    "FdrReport",
    "FilterError",
    "FitError",
    "FittedModel",
    "GroupAssignment",
    "GuardError",
    "ModelSpec",
    "ParseResult",
    "PowerCell",
    "PowerCurve",
    "Q3Report",
    "ReliabilityReport",
    "ResponseMatrix",
    "RunConfig",
    "RunManifest",
    "SchemaError",
    "SelectionReport",
    "SimConfig",
    "TraitEstimates",
    "ValidityReport",
    "achievement_rates",
    "ar_delta_test",
    "bh_adjust",
    "bic",
    "build_groups",
    "classify_case",
    "compute_gpa",
    "concurrent_validity",
    "dichotomize",
    "effect_size_probability",
    "estimate_null_fdr",
    "estimate_traits",
    "fit",
    "fit_dcf",
    "irf",
    "iterative_filter",
    "lrt_pvalue",
    "marginal_log_likelihood",
    "matrix_from_dense",
    "parse_enrollments",
    "projected_difficulty",
    "q3_statistics",
    "run_dcf_analysis",
    "run_power_cell",
    "run_power_study",
    "select_model",
    "simulate_responses",
    "split_half_reliability",
]
