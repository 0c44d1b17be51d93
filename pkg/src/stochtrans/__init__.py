"""Numerical laboratory for transport equations with multiplicative Brownian noise.

Solves ``du + b . grad u dt + sum_i d_i u o dB_i = 0`` by stochastic
characteristics and verifies the structural identities of the underlying
flow: the volume (Euler) identity, the weak formulation, the comparison
principle, the auxiliary-PDE (Zvonkin-type) change of drift, flow-regularity
moment statistics, and the headline contrast between deterministic gradient
blowup and almost-sure Sobolev bounds under noise.
"""

__version__ = "0.1.0"

from . import blowup, brownian, fields, flow, regularity, transport, zvonkin
from .errors import (
    BudgetError,
    DivergenceError,
    InversionError,
    NumericError,
    QuadratureError,
    ResolutionError,
    SaturationError,
    SingularInputError,
    SolverError,
    StochTransError,
    TruncationError,
    ValidationError,
)
from .grids import Grid

__all__ = [
    "Grid",
    "__version__",
    "blowup",
    "brownian",
    "fields",
    "flow",
    "regularity",
    "transport",
    "zvonkin",
    "StochTransError",
    "ValidationError",
    "NumericError",
    "DivergenceError",
    "SaturationError",
    "SingularInputError",
    "ResolutionError",
    "BudgetError",
    "SolverError",
    "InversionError",
    "QuadratureError",
    "TruncationError",
]
