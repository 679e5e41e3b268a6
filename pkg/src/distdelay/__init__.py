"""Identification of distributed time delays with mixed Erlang kernels.

The delay kernel is approximated by a mixture of Erlang densities with a
shared rate, which turns the delay system into an ordinary differential
equation via the linear chain trick. Model parameters, kernel weights, rate
and initial state are then fitted jointly by single shooting with forward
sensitivities and a projected quasi-Newton method.
"""

from .kernels import (
    ErlangMixture,
    FoldedNormalMixture,
    PointDelay,
    erlang_cdf,
    erlang_pdf,
    memory_horizon,
    tijms_weights,
)
from .model import DelayModel, MeasurementSeries, ThetaLayout, check_jacobians, pack_theta, unpack_theta
from .models import LinearModel, LogisticModel, ReactorModel, make_model
from .lct import AugmentedSystem, build_matrices, steady_state_Z0
from .ivp import IntegrationError, IntegratorConfig, Trajectory, integrate
from .sensitivities import simulate_augmented
from .ddesim import DdeSimConfig, dde_convergence_order, simulate_dde
from .estimator import Bounds, EstimationProblem, EstimationResult, objective, solve

__version__ = "0.1.0"

__all__ = [
    "ErlangMixture", "FoldedNormalMixture", "PointDelay", "erlang_cdf", "erlang_pdf",
    "memory_horizon", "tijms_weights",
    "DelayModel", "MeasurementSeries", "ThetaLayout", "check_jacobians", "pack_theta", "unpack_theta",
    "LinearModel", "LogisticModel", "ReactorModel", "make_model",
    "AugmentedSystem", "build_matrices", "steady_state_Z0",
    "IntegrationError", "IntegratorConfig", "Trajectory", "integrate",
    "simulate_augmented", "DdeSimConfig", "simulate_dde", "dde_convergence_order",
    "Bounds", "EstimationProblem", "EstimationResult", "objective", "solve",
]
