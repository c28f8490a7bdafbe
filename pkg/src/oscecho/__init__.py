"""Gaussian-state toolkit for frequency-jump oscillator-echo protocols.

Closed-form propagation of means and covariances through stepwise frequency
jumps, the three-step echo sequence that cancels shot-to-shot constant-force
noise, a seeded Langevin Monte Carlo oracle, and the estimation layer
(point-cloud statistics, decoupling-ratio sweeps, force-parameter fits).
"""

from .core import (
    HBAR,
    CovMat,
    ForceModel,
    GaussianState,
    OscillatorConfig,
    PhaseVec,
    Segment,
    displacement,
    heating_cov,
    normalized_force,
    propagate_segment,
    rotation_center,
    shot_cov,
    squeeze_decomposition,
    transition_matrix,
    zero_point_momentum,
)
from .errors import (
    ConfigurationError,
    DomainError,
    FitFailureError,
    InsufficientDataError,
    InvariantViolation,
    OscEchoError,
    UnidentifiableError,
)
from .estimation import (
    CovSE,
    EnsembleStats,
    FitResult,
    SweepResult,
    SweepRow,
    bootstrap_cov_se,
    ensemble_stats,
    fit_f0_from_displacement,
    fit_sigma_from_growth,
    fit_sigma_from_vtot,
    mean_standard_error,
    sweep_rprime,
)
from .montecarlo import (
    McConfig,
    ShotRecord,
    cov_sqrt,
    integrate_shot,
    run_ensemble,
    samples_array,
    shot_normals,
)
from .protocol import (
    EchoSpec,
    JumpSequence,
    SampleMark,
    echo_cov,
    echo_force_gain,
    echo_mean,
    echo_sequence,
    optimal_ratio,
    run_sequence,
    state_size,
)

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "CovMat",
    "ForceModel",
    "GaussianState",
    "OscillatorConfig",
    "PhaseVec",
    "Segment",
    "displacement",
    "heating_cov",
    "normalized_force",
    "propagate_segment",
    "rotation_center",
    "shot_cov",
    "squeeze_decomposition",
    "transition_matrix",
    "zero_point_momentum",
    "ConfigurationError",
    "DomainError",
    "FitFailureError",
    "InsufficientDataError",
    "InvariantViolation",
    "OscEchoError",
    "UnidentifiableError",
    "CovSE",
    "EnsembleStats",
    "FitResult",
    "SweepResult",
    "SweepRow",
    "bootstrap_cov_se",
    "ensemble_stats",
    "fit_f0_from_displacement",
    "fit_sigma_from_growth",
    "fit_sigma_from_vtot",
    "mean_standard_error",
    "sweep_rprime",
    "McConfig",
    "ShotRecord",
    "cov_sqrt",
    "integrate_shot",
    "run_ensemble",
    "samples_array",
    "shot_normals",
    "EchoSpec",
    "JumpSequence",
    "SampleMark",
    "echo_cov",
    "echo_force_gain",
    "echo_mean",
    "echo_sequence",
    "optimal_ratio",
    "run_sequence",
    "state_size",
]
