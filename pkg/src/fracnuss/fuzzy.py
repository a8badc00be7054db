"""Fuzzy logic system (FLS) approximator.

Gaussian memberships on a tensor grid of rule centers, product inference
and normalization give the fuzzy basis vector ``phi(x)``; the FLS output is
the linear combination ``theta @ phi(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DomainError, NumericError

DEFAULT_CENTERS = (-2.0, -1.0, 0.0, 1.0, 2.0)
DEFAULT_WIDTH = 1.0


@dataclass(frozen=True)
class MembershipGrid:
    """Per-dimension Gaussian membership centers sharing one width.

    ``centers`` holds one sequence per input dimension; passing a flat
    sequence together with ``input_dim`` repeats it for every dimension.
    Membership ``l`` of dimension ``i`` is ``exp(-0.5 ((x_i - c_l) / width)**2)``.
    Rules form the full tensor grid, ordered with the last input varying
    fastest.
    """

    centers: tuple[tuple[float, ...], ...]
    width: float = DEFAULT_WIDTH

    def __post_init__(self) -> None:
        if not self.width > 0:
            raise DomainError(f"membership width must be positive, got {self.width}")
        if not self.centers:
            raise DomainError("need at least one input dimension")
        for c in self.centers:
            if len(c) < 2:
                raise DomainError("each input needs at least two membership centers")
            if not np.all(np.isfinite(c)):
                raise DomainError("membership centers must be finite")

    @classmethod
    def uniform(cls, input_dim: int, centers: Sequence[float] = DEFAULT_CENTERS,
                width: float = DEFAULT_WIDTH) -> "MembershipGrid":
        row = tuple(float(c) for c in centers)
        return cls(tuple(row for _ in range(input_dim)), float(width))

    @property
    def input_dim(self) -> int:
        return len(self.centers)

    @property
    def n_rules(self) -> int:
        return int(np.prod([len(c) for c in self.centers]))


@dataclass
class FlsParams:
    """Rule weights ``theta`` of an FLS (zero by default)."""

    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(self.theta)):
            raise DomainError("FLS weights must be finite")

    @classmethod
    def zeros(cls, grid: MembershipGrid) -> "FlsParams":
        return cls(np.zeros(grid.n_rules))


def _normalized_memberships(centers: np.ndarray, width: float, x: float) -> np.ndarray:
    # the product-normalized basis factorizes over dimensions; shifting the
    # exponents by their maximum keeps far-out inputs from underflowing
    expo = -0.5 * ((x - centers) / width) ** 2
    mu = np.exp(expo - expo.max())
    total = mu.sum()
    if not total > 0 or not np.isfinite(total):
        raise DomainError(f"membership values vanish at input {x}")
    return mu / total


def basis(grid: MembershipGrid, x) -> np.ndarray:
    """Normalized fuzzy basis vector ``phi(x)`` of length ``grid.n_rules``.

    Entries are nonnegative and sum to one.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != grid.input_dim:
        raise ContractViolation(f"input has {x.size} entries, grid expects {grid.input_dim}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite FLS input {x}")
    phi = np.ones(1)
    for xi, c in zip(x, grid.centers):
        phi = np.multiply.outer(phi, _normalized_memberships(np.asarray(c), grid.width, xi)).ravel()
    return phi


def fls_eval(params: FlsParams, phi) -> float:
    """FLS output ``theta @ phi``."""
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.shape != params.theta.shape:
        raise ContractViolation(f"basis length {phi.size} != weight length {params.theta.size}")
    return float(params.theta @ phi)


def fit_offline(target: Callable[[np.ndarray], float], grid: MembershipGrid, samples) -> FlsParams:
    """Least-squares weights fitting ``target`` at ``samples``.

    Raises :class:`NumericError` when the design matrix is rank deficient,
    which usually means the samples do not cover every rule.
    """
    pts = np.asarray(samples, dtype=float).reshape(-1, grid.input_dim)
    if len(pts) < grid.n_rules:
        raise NumericError(
            f"{len(pts)} samples cannot determine {grid.n_rules} weights; use denser samples"
        )
    design = np.array([basis(grid, p) for p in pts])
    rhs = np.array([float(target(p if grid.input_dim > 1 else p[0])) for p in pts])
    theta, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < grid.n_rules:
        raise NumericError(
            f"design matrix has rank {rank} < {grid.n_rules}; use denser samples"
        )
    return FlsParams(theta)
