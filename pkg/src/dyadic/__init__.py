"""Numerical laboratory for the inviscid dyadic shell model."""

__version__ = "0.1.0"

from ._validation import ConfigurationError
from .diagnostics import DiagnosticsReport, PairCertificate, diagnose, pair_certificate
from .initial import InitialCondition, parse_initial_condition
from .integrate import (
    IntegrationError,
    IntegratorConfig,
    StiffnessError,
    Trajectory,
    integrate,
    step_adaptive,
    step_positivity,
)
from .model import CoefficientScheme, ShellState, energy, h1_norm_sq, rhs

__all__ = [
    "__version__",
    "ConfigurationError",
    "CoefficientScheme",
    "ShellState",
    "rhs",
    "energy",
    "h1_norm_sq",
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "StiffnessError",
    "integrate",
    "step_adaptive",
    "step_positivity",
    "InitialCondition",
    "parse_initial_condition",
    "DiagnosticsReport",
    "PairCertificate",
    "diagnose",
    "pair_certificate",
]
