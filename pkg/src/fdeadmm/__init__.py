"""Matrix-free ADMM for box-constrained fractional diffusion control problems."""

from .admm import AdmmConfig, SolveResult, solve
from .problem import ParameterError, ProblemSpec

__all__ = ["AdmmConfig", "ParameterError", "ProblemSpec", "SolveResult", "solve"]
__version__ = "0.1.0"
