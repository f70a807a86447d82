"""Certified solver for stationary second-order mean field games with a
hard density constraint ``0 <= m <= 1``."""

from mfgcert.errors import (
    ConfigError,
    IncompatibleRhs,
    InfeasiblePoint,
    MaxIterExceeded,
    NoConvergence,
    SpecError,
)
from mfgcert.grid import Grid
from mfgcert.perspective import CongestionParams
from mfgcert.coupling import Coupling
from mfgcert.solver import ProblemSpec, Solution, SolverConfig, homotopy_solve, solve
from mfgcert.certificates import Certificate, Multipliers, certify

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "ConfigError",
    "CongestionParams",
    "Coupling",
    "Grid",
    "IncompatibleRhs",
    "InfeasiblePoint",
    "MaxIterExceeded",
    "Multipliers",
    "NoConvergence",
    "ProblemSpec",
    "Solution",
    "SolverConfig",
    "SpecError",
    "certify",
    "homotopy_solve",
    "solve",
]
