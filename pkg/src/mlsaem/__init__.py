"""Stochastic Morris-Lecar simulation, gating-path particle filtering
and SAEM parameter estimation from membrane-potential observations."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateTransitionError,
    Error,
    EstimationError,
    NumericError,
    RankDeficiencyError,
    WeightCollapseError,
)
from .model import ModelParams, THETA_FIELDS, default_params
from .simulate import Trajectory, euler_step, read_trajectory, simulate_path, subsample
from .densities import TransitionInput
from .smc import FilterOutput, ParticleCloud, PriorConfig
from .saem import (
    EstimateReport,
    SaemConfig,
    SimSettings,
    StepSchedule,
    SufficientStats,
    complete_data_mle,
    compute_stats,
    m_step,
    replicate_study,
    saem_fit,
    standard_errors,
)

__all__ = [
    "ConfigError", "DegenerateTransitionError", "Error", "EstimationError",
    "NumericError", "RankDeficiencyError", "WeightCollapseError",
    "ModelParams", "THETA_FIELDS", "default_params",
    "Trajectory", "euler_step", "read_trajectory", "simulate_path", "subsample",
    "TransitionInput", "FilterOutput", "ParticleCloud", "PriorConfig",
    "EstimateReport", "SaemConfig", "SimSettings", "StepSchedule",
    "SufficientStats", "complete_data_mle", "compute_stats", "m_step",
    "replicate_study", "saem_fit", "standard_errors",
    "__version__",
]
