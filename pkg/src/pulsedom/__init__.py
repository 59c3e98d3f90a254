"""Gaussian covariance modelling of pulsed optomechanical measurements."""

from .dynamics import (
    OscillatorParams,
    ThermalSegmentStats,
    UnsupportedRegimeError,
    apply_free_evolution,
    segment_stats,
    thermal_occupation,
)
from .gaussian import (
    DegenerateMeasurementError,
    ModeKind,
    NoiseMode,
    QuadratureForm,
    Registry,
    StructuralError,
    SystemState,
    conditional_covariance,
    conditional_variance,
    covariance,
    variance,
)
from .optimize import Budget, OptimizationResult, allocate_pulses, optimal_homodyne_angle
from .protocol import (
    Displace,
    EffectiveInteraction,
    FreeEvolution,
    Loss,
    Pulse,
    PulseParams,
    Snapshot,
    backaction_evading_lambda2,
    double_pulse,
    effective_interaction,
    lambda_from_physical,
    run_protocol,
    single_pulse_posterior,
    single_pulse_prior,
)

__version__ = "0.1.0"
