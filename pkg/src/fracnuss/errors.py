"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class FracNussError(Exception):
    """Base class for all package errors."""


class DomainError(FracNussError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractViolation(FracNussError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class NumericError(FracNussError, ArithmeticError):
    """A numerical procedure failed to reach its accuracy target.

    ``value`` carries the best partial result and ``bound`` an estimate of
    its error (``inf`` when no estimate is available).
    """

    def __init__(self, message: str, value: float = float("nan"), bound: float = float("inf")):
        super().__init__(message)
        self.value = value
        self.bound = bound


class NussbaumOverflowError(NumericError):
    """Evaluating a Nussbaum gain overflowed double precision."""
