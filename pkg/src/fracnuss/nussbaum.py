r"""Nussbaum gain functions and a numerical check of the fractional-order
Nussbaum bound.

A Nussbaum function ``N`` has a running integral :math:`\int_0^\delta N`
whose upper and lower limits are :math:`+\infty` and :math:`-\infty`.
Controllers use ``N(delta)`` as a self-tuning gain when the sign of the
input coefficient is unknown.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from .errors import ContractViolation, DomainError, NumericError, NussbaumOverflowError
from .fracnum import (
    check_order,
    fit_ml_envelope,
    kernel_cell_integrals,
    mittag_leffler_array,
    singular_convolve_all,
)

# exp(delta**2) overflows double precision beyond this magnitude
EXP_DELTA_LIMIT = math.sqrt(math.log(np.finfo(float).max))


class Growth(enum.Enum):
    EXPONENTIAL = "exp"
    QUADRATIC = "quad"


class Phase(enum.Enum):
    SIN = "sin"
    COS = "cos"


@dataclass(frozen=True)
class NussbaumKind:
    """One of ``exp(d**2)`` or ``d**2`` times ``sin(pi d / 2)`` or ``cos(pi d / 2)``."""

    growth: Growth = Growth.QUADRATIC
    phase: Phase = Phase.SIN

    @classmethod
    def parse(cls, text: str) -> "NussbaumKind":
        """Parse names such as ``"quad-sin"`` or ``"exp-cos"``."""
        try:
            g, p = text.strip().lower().split("-")
            return cls(Growth(g), Phase(p))
        except ValueError:
            raise DomainError(f"unknown Nussbaum kind {text!r}; expected e.g. 'quad-sin'") from None

    def __str__(self) -> str:
        return f"{self.growth.value}-{self.phase.value}"


QUAD_SIN = NussbaumKind(Growth.QUADRATIC, Phase.SIN)
EXP_SIN = NussbaumKind(Growth.EXPONENTIAL, Phase.SIN)
ALL_KINDS = tuple(NussbaumKind(g, p) for g in Growth for p in Phase)


def nussbaum(kind: NussbaumKind, delta: float) -> float:
    """Evaluate ``N(delta)``; the exponential kinds raise on overflow."""
    delta = float(delta)
    if not math.isfinite(delta):
        raise NussbaumOverflowError(f"Nussbaum argument is not finite: {delta}", value=delta)
    if kind.growth is Growth.EXPONENTIAL:
        if abs(delta) > EXP_DELTA_LIMIT:
            raise NussbaumOverflowError(
                f"exp(delta**2) overflows at delta={delta:.4g} (limit {EXP_DELTA_LIMIT:.4g}); "
                "use a quadratic Nussbaum kind for long runs",
                value=delta,
                bound=EXP_DELTA_LIMIT,
            )
        amp = math.exp(delta * delta)
    else:
        amp = delta * delta
    arg = 0.5 * math.pi * delta
    return amp * (math.sin(arg) if kind.phase is Phase.SIN else math.cos(arg))


def nussbaum_array(kind: NussbaumKind, delta) -> np.ndarray:
    d = np.asarray(delta, dtype=float)
    if kind.growth is Growth.EXPONENTIAL:
        if np.any(np.abs(d) > EXP_DELTA_LIMIT) or not np.all(np.isfinite(d)):
            bad = float(d.flat[np.argmax(np.where(np.isfinite(d), np.abs(d), np.inf))])
            raise NussbaumOverflowError(f"exp(delta**2) overflows at delta={bad:.4g}",
                                        value=bad, bound=EXP_DELTA_LIMIT)
        amp = np.exp(d * d)
    else:
        amp = d * d
    arg = 0.5 * np.pi * d
    return amp * (np.sin(arg) if kind.phase is Phase.SIN else np.cos(arg))


def nussbaum_integral(kind: NussbaumKind, d0: float, d1: float) -> float:
    """``int_{d0}^{d1} N``, by adaptive quadrature to relative accuracy 1e-8."""
    if d1 < d0:
        raise DomainError(f"need d0 <= d1, got [{d0}, {d1}]")
    if d0 == d1:
        return 0.0
    # one subinterval per half period so quad never straddles many sign changes
    edges = np.unique(np.r_[d0, np.arange(math.ceil(d0), math.floor(d1) + 1), d1])
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(lambda d: nussbaum(kind, d), a, b, epsabs=0.0, epsrel=1e-11, limit=200)
        total += val
        err += e
    if err > 1e-8 * max(abs(total), 1e-300) and err > 1e-13:
        raise NumericError("Nussbaum integral did not converge", value=total, bound=err)
    return total


@dataclass(frozen=True)
class NussbaumWitness:
    """Arguments where the running integral first exceeds ``+threshold`` and
    first falls below ``-threshold`` (``None`` when not found)."""

    sup_witness: float | None
    inf_witness: float | None

    @property
    def found(self) -> bool:
        return self.sup_witness is not None and self.inf_witness is not None


def check_nussbaum_property(kind: NussbaumKind, threshold: float,
                            search_limit: float) -> NussbaumWitness:
    """Search ``[0, search_limit]`` for arguments where the running integral
    of ``N`` from 0 leaves ``[-threshold, threshold]`` on either side.

    The integral is accumulated exactly per unit cell (where ``N`` keeps its
    sign), and the crossing point inside a cell is located by root finding.
    """
    if threshold < 0:
        raise DomainError(f"threshold must be nonnegative, got {threshold}")
    sup_w: float | None = None
    inf_w: float | None = None
    running = 0.0
    grid = np.r_[np.arange(0.0, math.floor(search_limit) + 1.0), search_limit]
    grid = np.unique(grid[grid <= search_limit])
    for a, b in zip(grid[:-1], grid[1:]):
        try:
            cell = nussbaum_integral(kind, a, b)
        except NussbaumOverflowError:
            break
        nxt = running + cell
        for target, which in ((threshold, "sup"), (-threshold, "inf")):
            if (which == "sup" and sup_w is None and nxt > target) or (
                which == "inf" and inf_w is None and nxt < target
            ):
                start = running

                def gap(d, start=start, target=target, a=a):
                    return start + nussbaum_integral(kind, a, d) - target

                root = a if gap(a) * gap(b) > 0 else brentq(gap, a, b, xtol=1e-12)
                # strict inequality just past the crossing
                root = math.nextafter(root, b)
                if which == "sup":
                    sup_w = root
                else:
                    inf_w = root
        running = nxt
        if sup_w is not None and inf_w is not None:
            break
    return NussbaumWitness(sup_w, inf_w)


# {{{ fractional Nussbaum bound


@dataclass
class BoundReport:
    """Comparison of a Lyapunov trajectory ``V`` against its Nussbaum bound.

    ``rhs`` is the bound at each grid time, ``slack = rhs - V`` and
    ``tolerance`` the combined quadrature and differencing error estimate.
    ``sigma`` is the fitted Mittag-Leffler envelope constant used in ``H``.
    """

    t: np.ndarray
    v_traj: np.ndarray
    rhs_traj: np.ndarray
    slack: np.ndarray
    tolerance: np.ndarray
    sigma: float
    h_traj: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def max_violation(self) -> float:
        """Largest amount by which ``V`` exceeds the bound (0 when none)."""
        return float(max(0.0, -np.min(self.slack))) if len(self.slack) else 0.0

    def passes(self, factor: float = 10.0) -> bool:
        """Whether ``slack >= -factor * tolerance`` at every time."""
        return bool(np.all(self.slack >= -factor * self.tolerance))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "V", "rhs", "slack"])
            for row in zip(self.t, self.v_traj, self.rhs_traj, self.slack):
                w.writerow([repr(float(v)) for v in row])


def _envelope_sigma(alpha: float) -> float:
    # sigma of |E_{a,a+1}(nu)| <= sigma / (1 + |nu|), the factor that turns
    # the constant zeta into zeta * sigma / lambda after convolution
    nu = np.linspace(-100.0, 0.0, 401)
    return fit_ml_envelope(alpha, alpha + 1.0, nu)


def theorem1_bound(alpha: float, lam: float, zeta: float, v0: float,
                   g: Sequence[Sequence[float]], delta: Sequence[Sequence[float]],
                   kind: NussbaumKind, dt: float, v_traj: Sequence[float] | None = None,
                   sigma: float | None = None) -> BoundReport:
    r"""Evaluate the fractional Nussbaum bound along sampled trajectories.

    For every grid time ``t`` the bound is

    .. math::

        \sum_i \int_0^t (g_i N(\delta_i) + 1)\dot\delta_i(s)\,
              (t-s)^{\alpha-1}E_{\alpha,\alpha}(-\lambda(t-s)^\alpha)\,ds
        + E_{\alpha,1}(-\lambda t^\alpha) V(0) + \zeta\sigma/\lambda

    with :math:`\dot\delta` from second-order finite differences. ``g`` and
    ``delta`` hold one row per gain channel. ``v_traj`` (defaults to the
    bound itself, i.e. zero slack) is compared against it.
    """
    alpha = check_order(alpha)
    if not (lam > 0 and zeta > 0):
        raise DomainError("lambda and zeta must be positive")
    gm = np.atleast_2d(np.asarray(g, dtype=float))
    dm = np.atleast_2d(np.asarray(delta, dtype=float))
    if gm.shape != dm.shape:
        raise ContractViolation(f"gain grid {gm.shape} does not match delta grid {dm.shape}")
    n = dm.shape[1]
    if n < 2:
        raise ContractViolation("need at least two samples per trajectory")
    if v_traj is not None and len(v_traj) != n:
        raise ContractViolation(f"V has {len(v_traj)} samples, trajectories have {n}")
    t = np.arange(n) * dt

    sig = _envelope_sigma(alpha) if sigma is None else float(sigma)
    h = mittag_leffler_array(alpha, 1.0, -lam * t**alpha) * v0 + zeta * sig / lam

    cells = kernel_cell_integrals(alpha, lam, n - 1, dt)
    conv = np.zeros(n)
    tol = np.zeros(n)
    for gi, di in zip(gm, dm):
        ddot = np.gradient(di, dt)
        integrand = (gi * nussbaum_array(kind, di) + 1.0) * ddot
        val, err = singular_convolve_all(alpha, lam, integrand, dt, cells=cells)
        conv += val
        tol += err
    rhs = h + conv
    # rounding floor so that exact equality is never reported as a violation
    tol = tol + 64 * np.finfo(float).eps * (np.abs(rhs) + np.abs(h))
    v = rhs.copy() if v_traj is None else np.asarray(v_traj, dtype=float)
    return BoundReport(t=t, v_traj=v, rhs_traj=rhs, slack=rhs - v, tolerance=tol, sigma=sig, h_traj=h)

# }}}
