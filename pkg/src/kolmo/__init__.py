"""Potential theory for degenerate Ornstein-Uhlenbeck operators, made computable.

Submodules
----------
operator     block structure, group law, dilations, covariance
fundamental  fundamental solution and exact transition sampler
domain       membership oracles, combinators, cylinders
criterion    series criterion for boundary regularity
dirichlet    Monte Carlo Dirichlet solutions and regularity probes
barrier      explicit barrier functions
harness      stationary/evolution equivalence experiments
cli          command line entry point
"""

from .errors import ConfigError, EquivalenceViolation, KolmoError, NumericalError, StructureError
from .fundamental import GammaContext, gamma, gamma_fundamental
from .operator import GroupPoint, OUOperator, heat, kolmogorov, validate

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EquivalenceViolation", "KolmoError", "NumericalError", "StructureError",
    "GammaContext", "gamma", "gamma_fundamental",
    "GroupPoint", "OUOperator", "heat", "kolmogorov", "validate",
]
