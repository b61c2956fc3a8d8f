"""Throughput prediction for CAS-based lock-free data structures.

Two analytical models (average-based and Markov-chain), a multi-stage
extension, a discrete-event simulator used as the reference, tuning
advice, and an optional hardware benchmark harness.
"""

from .core import (ConvergenceError, Distribution, Kind, Mode, PlatformParams, Prediction,
                   ValidationError, WorkloadParams, load_params, validate)
from .avg import predict_avg, upper_bound
from .markov import predict_markov
from .multistage import StageSpec, MixedWorkload, mixed_throughput, predict_multistage
from .simulator import SimConfig, SimStats, run, sweep

__all__ = [
    "ConvergenceError", "Distribution", "Kind", "Mode", "PlatformParams", "Prediction",
    "ValidationError", "WorkloadParams", "load_params", "validate",
    "predict_avg", "upper_bound", "predict_markov",
    "StageSpec", "MixedWorkload", "mixed_throughput", "predict_multistage",
    "SimConfig", "SimStats", "run", "sweep",
]
