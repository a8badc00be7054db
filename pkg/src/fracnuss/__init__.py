"""Fractional-order decentralized adaptive fuzzy control with Nussbaum gains.

Submodules:

``fracnum``     Mittag-Leffler functions, Grünwald-Letnikov stepping, singular convolutions
``fuzzy``       Gaussian fuzzy logic approximator
``nussbaum``    Nussbaum gain functions and the fractional Nussbaum bound check
``plant``       interconnected plant models and assumption checks
``controller``  per-subsystem backstepping controller
``sim``         closed-loop simulation, CSV output and metrics
``cli``         command-line front end
"""

from __future__ import annotations

from .errors import ContractViolation, DomainError, FracNussError, NumericError, NussbaumOverflowError

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "DomainError",
    "FracNussError",
    "NumericError",
    "NussbaumOverflowError",
    "__version__",
]
