"""Constant-step linear stochastic approximation under Markovian noise.

Simulation kernels for the iterate recursion and its two-step-size
extrapolation, an exact error-term expansion, closed-form bias and
covariance formulas for finite ergodic chains, and a Monte-Carlo
experiment harness with CSV output.
"""

from .chain import (
    FiniteMarkovChain,
    check_ergodic,
    deviation_matrix,
    dobrushin_coefficient,
    mixing_time,
    sample_path,
    series_operator,
    stationary_distribution,
    tv_rate,
)
from .errors import (
    CenteringViolation,
    ConfigError,
    InconsistentDims,
    InsufficientGrid,
    LsaLabError,
    NonErgodicChain,
    NotHurwitz,
    NumericalDivergence,
    SingularSystem,
    TruncationFailure,
)
from .model import (
    LsaModel,
    StabilityConstants,
    build_model,
    echo_config,
    hurwitz_margin,
    lyapunov_constants,
    markov_constants,
    solve_target,
    step_size_thresholds,
)
from .lsa import LsaRunConfig, RrOutput, lsa_run, rr_run
from .expansion import ExpansionState, expansion_run, matrix_product_gamma, moment_probe
from .analytics import (
    AnalyticReport,
    analytic_report,
    asymptotic_covariance,
    delta_first_order,
    delta_second_order,
    noise_covariance,
    predicted_bias,
    remainder_bound,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    GridPoint,
    PointResult,
    experiment_from_config,
    jackknife_se,
    leading_term_check,
    remainder_scaling,
    run_experiment,
    write_csv,
)
from .rng import make_rng, substream

__version__ = "0.1.0"

__all__ = [
    "AnalyticReport",
    "CenteringViolation",
    "ConfigError",
    "ExpansionState",
    "ExperimentConfig",
    "ExperimentResult",
    "FiniteMarkovChain",
    "GridPoint",
    "InconsistentDims",
    "InsufficientGrid",
    "LsaLabError",
    "LsaModel",
    "LsaRunConfig",
    "NonErgodicChain",
    "NotHurwitz",
    "NumericalDivergence",
    "PointResult",
    "RrOutput",
    "SingularSystem",
    "StabilityConstants",
    "TruncationFailure",
    "analytic_report",
    "asymptotic_covariance",
    "build_model",
    "check_ergodic",
    "delta_first_order",
    "delta_second_order",
    "deviation_matrix",
    "dobrushin_coefficient",
    "echo_config",
    "experiment_from_config",
    "expansion_run",
    "hurwitz_margin",
    "jackknife_se",
    "leading_term_check",
    "lsa_run",
    "lyapunov_constants",
    "make_rng",
    "markov_constants",
    "matrix_product_gamma",
    "mixing_time",
    "moment_probe",
    "noise_covariance",
    "predicted_bias",
    "remainder_bound",
    "remainder_scaling",
    "rr_run",
    "run_experiment",
    "sample_path",
    "series_operator",
    "solve_target",
    "stationary_distribution",
    "step_size_thresholds",
    "substream",
    "tv_rate",
    "write_csv",
]
