r"""Decentralized adaptive fuzzy backstepping controller with Nussbaum gains.

Each subsystem runs its own controller using only its local state and the
shared output vector. Step ``j`` of the recursion forms the error
``z_j = x_j - tau_{j-1}`` (``z_1 = x_1 - y_r``), a stabilizing signal
``eta_j`` built from a fuzzy approximation of the unknown dynamics, and the
virtual control ``tau_j = N(delta_j) eta_j`` whose Nussbaum argument obeys
``d delta_j / dt = z_j eta_j``. The last virtual control is the plant input.
FLS weights and the interaction-bound estimate ``mu_hat`` adapt through
order-``alpha`` laws with leakage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DomainError
from .fracnum import MemoryBuffer, check_order, frac_step
from .fuzzy import FlsParams, MembershipGrid, basis
from .nussbaum import QUAD_SIN, NussbaumKind, nussbaum
from .plant import SubsystemSpec

DEFAULT_VARPI = 0.1
DEFAULT_RHO = 0.1
DEFAULT_GAMMA1 = 1.0
DEFAULT_GAMMA2 = 0.1


@dataclass(frozen=True)
class ControllerGains:
    """Design parameters of one subsystem's controller.

    ``c``, ``k``, ``l``, ``rho`` and ``Lambda`` have one entry per step;
    ``Lambda`` entries are positive scalars (multiples of the identity) or
    positive-definite matrices.
    """

    c: tuple[float, ...]
    k: tuple[float, ...]
    l: tuple[float, ...]
    b: float
    varpi: float = DEFAULT_VARPI
    Lambda: tuple = ()
    rho: tuple[float, ...] = ()
    gamma1: float = DEFAULT_GAMMA1
    gamma2: float = DEFAULT_GAMMA2

    def __post_init__(self) -> None:
        n = len(self.c)
        if not (len(self.k) == len(self.l) == n) or n == 0:
            raise ContractViolation("c, k and l need one entry per step")
        if not self.Lambda:
            object.__setattr__(self, "Lambda", (1.0,) * n)
        if not self.rho:
            object.__setattr__(self, "rho", (DEFAULT_RHO,) * n)
        if len(self.Lambda) != n or len(self.rho) != n:
            raise ContractViolation("Lambda and rho need one entry per step")
        if any(c <= 0.25 for c in self.c):
            raise DomainError(f"every c must exceed 1/4, got {self.c}")
        for label, vals in (("k", self.k), ("l", self.l), ("rho", self.rho)):
            if any(v <= 0 for v in vals):
                raise DomainError(f"every {label} must be positive, got {vals}")
        for label, v in (("b", self.b), ("varpi", self.varpi), ("gamma1", self.gamma1),
                         ("gamma2", self.gamma2)):
            if not v > 0:
                raise DomainError(f"{label} must be positive, got {v}")
        for lam in self.Lambda:
            m = np.atleast_2d(np.asarray(lam, dtype=float))
            if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
                raise DomainError("Lambda entries must be symmetric")
            if np.any(np.linalg.eigvalsh(m) <= 0):
                raise DomainError("Lambda entries must be positive definite")

    @property
    def n(self) -> int:
        return len(self.c)

    def eta_gain(self, j: int) -> float:
        """Coefficient of ``z_j`` in ``eta_j`` (0-based step index)."""
        total = self.c[j] + self.k[j] + self.l[j]
        return total + self.b if j == self.n - 1 else total

    @classmethod
    def from_cbar(cls, cbar: Sequence[float], **kw) -> "ControllerGains":
        """Split combined gains ``cbar_j = c_j + k_j + l_j (+ b)``.

        ``k``, ``l`` and (on the last step) ``b`` each get
        ``min(1/4, cbar_j / 8)`` and ``c`` the remainder, which keeps
        ``c > 1/4`` for every ``cbar > 0.4``.
        """
        cbar = [float(v) for v in cbar]
        n = len(cbar)
        share = [min(0.25, v / 8.0) for v in cbar]
        c = [v - 2.0 * s for v, s in zip(cbar, share)]
        c[-1] -= share[-1]
        return cls(c=tuple(c), k=tuple(share), l=tuple(share), b=share[-1], **kw)


# {{{ control laws

def coordinate_change(x_i, y_ri: float, tau: Sequence[float]) -> np.ndarray:
    """Errors ``z_1 = x_1 - y_r`` and ``z_j = x_j - tau_{j-1}``."""
    x = np.asarray(x_i, dtype=float).ravel()
    tau = np.asarray(tau, dtype=float).ravel()
    if tau.size != x.size - 1:
        raise ContractViolation(f"need {x.size - 1} virtual controls, got {tau.size}")
    return x - np.r_[y_ri, tau]


def h_function(z1: float, varpi: float, psi_sq_sum: float) -> float:
    """Interaction compensator ``2 z1 / (z1**2 + varpi) * psi_sq_sum``."""
    if not varpi > 0:
        raise DomainError(f"varpi must be positive, got {varpi}")
    if psi_sq_sum < 0:
        raise DomainError("psi_sq_sum is a sum of squares")
    return 2.0 * z1 / (z1 * z1 + varpi) * psi_sq_sum


def _nussbaum_law(gain: float, z: float, fls_out: float, kind: NussbaumKind,
                  delta: float, extra: float = 0.0) -> tuple[float, float, float]:
    eta = gain * z + fls_out + extra
    return nussbaum(kind, delta) * eta, eta, z * eta


def step1_control(z1: float, fls_out: float, mu_hat: float, h: float, d_alpha_yr: float,
                  gain: float, kind: NussbaumKind, delta1: float) -> tuple[float, float, float]:
    """First step: returns ``(tau_1, eta_1, delta_1_dot)``.

    ``gain`` is ``c + k + l`` of step 1.
    """
    return _nussbaum_law(gain, z1, fls_out, kind, delta1, mu_hat * h - d_alpha_yr)


def stepj_control(zj: float, fls_out: float, gain: float, kind: NussbaumKind,
                  deltaj: float) -> tuple[float, float, float]:
    """Intermediate step: returns ``(tau_j, eta_j, delta_j_dot)``."""
    return _nussbaum_law(gain, zj, fls_out, kind, deltaj)


def final_control(zn: float, fls_out: float, gain: float, kind: NussbaumKind,
                  deltan: float) -> tuple[float, float, float]:
    """Last step: returns ``(u, eta_n, delta_n_dot)``; ``gain`` is ``c + k + l + b``."""
    return _nussbaum_law(gain, zn, fls_out, kind, deltan)


def theta_rate(Lambda, phi, z: float, rho: float, theta) -> np.ndarray:
    """Right side ``Lambda phi z - rho theta`` of the FLS weight law."""
    phi = np.asarray(phi, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    if phi.shape != theta.shape:
        raise ContractViolation(f"basis length {phi.size} != weight length {theta.size}")
    lam = np.asarray(Lambda, dtype=float)
    if lam.ndim == 0:
        drive = lam * phi * z
    else:
        if lam.shape != (phi.size, phi.size):
            raise ContractViolation(f"Lambda shape {lam.shape} does not match basis length {phi.size}")
        drive = lam @ phi * z
    return drive - rho * theta


def mu_rate(gamma1: float, z1: float, h: float, gamma2: float, mu_hat: float) -> float:
    """Right side ``gamma1 z1 h - gamma2 mu_hat`` of the interaction-bound law."""
    return gamma1 * z1 * h - gamma2 * mu_hat

# }}}


# {{{ per-subsystem controller

def regressor_grids(n: int, regressor: str = "full",
                    centers: Sequence[float] | None = None, width: float | None = None) -> tuple[MembershipGrid, ...]:
    """Membership grids for the FLS of every step.

    Step 1 sees ``x_1``. Step ``j >= 2`` sees ``(x_1..x_j, z_j, tau_{j-1})``
    with ``regressor="full"`` or ``(x_1..x_j, tau_{j-1})`` with
    ``regressor="compact"`` (``z_j`` is then implied by ``x_j - tau_{j-1}``).
    """
    if regressor not in ("full", "compact"):
        raise DomainError(f"unknown regressor layout {regressor!r}")
    kw = {}
    if centers is not None:
        kw["centers"] = tuple(centers)
    if width is not None:
        kw["width"] = width
    extra = 2 if regressor == "full" else 1
    return tuple(MembershipGrid.uniform(1 if j == 0 else j + 1 + extra, **kw) for j in range(n))


def regressor_input(j: int, x, z, tau, regressor: str) -> np.ndarray:
    if j == 0:
        return np.asarray(x[:1], dtype=float)
    head = np.asarray(x[: j + 1], dtype=float)
    if regressor == "full":
        return np.r_[head, z[j], tau[j - 1]]
    return np.r_[head, tau[j - 1]]


@dataclass
class AdaptiveState:
    """Controller memory of one subsystem.

    The FLS weights of every step and ``mu_hat`` are stacked into a single
    vector advanced by one :class:`MemoryBuffer`; ``delta`` holds the
    Nussbaum arguments and ``tau_prev`` the last virtual controls.
    """

    grids: tuple[MembershipGrid, ...]
    buffer: MemoryBuffer
    delta: np.ndarray
    tau_prev: np.ndarray
    alpha: float
    regressor: str = "full"
    slices: tuple[slice, ...] = field(init=False)

    def __post_init__(self) -> None:
        bounds = np.cumsum([0] + [g.n_rules for g in self.grids])
        self.slices = tuple(slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]))

    @classmethod
    def initial(cls, n: int, alpha: float, dt: float, *, regressor: str = "full",
                truncation: int | None = None, grids: tuple[MembershipGrid, ...] | None = None,
                delta0: Sequence[float] | None = None) -> "AdaptiveState":
        """Zero FLS weights, ``mu_hat = 0`` and ``delta = delta0`` (default 0)."""
        alpha = check_order(alpha)
        grids = regressor_grids(n, regressor) if grids is None else grids
        size = sum(g.n_rules for g in grids) + 1
        buf = MemoryBuffer(np.zeros(size), dt, truncation=truncation)
        delta = np.zeros(n) if delta0 is None else np.array(delta0, dtype=float)
        return cls(grids, buf, delta, np.zeros(max(n - 1, 0)), alpha, regressor)

    @property
    def params(self) -> np.ndarray:
        return self.buffer.last

    def theta(self, j: int) -> FlsParams:
        return FlsParams(self.params[self.slices[j]])

    @property
    def mu_hat(self) -> float:
        return float(self.params[-1])


@dataclass(frozen=True)
class StepOutput:
    """Everything one controller evaluation produced."""

    u: float
    z: np.ndarray
    eta: np.ndarray
    tau: np.ndarray
    delta_dot: np.ndarray
    theta_rates: tuple[np.ndarray, ...]
    mu_rate: float
    h: float


def psi_square_sum(spec_set: Sequence[SubsystemSpec], i: int, y_i: float) -> float:
    """``sum_q sum_j psi_{q,j,i}(y_i)**2``: bounds of every coupling that
    involves output ``i``, evaluated at the local output."""
    total = 0.0
    for s in spec_set:
        for row in s.psi_bounds:
            psi = row[i]
            if psi is not None:
                total += float(psi(y_i)) ** 2
    return total


def evaluate_controller(state: AdaptiveState, x_i, y_ri: float, d_alpha_yr: float,
                        psi_sq: float, gains: ControllerGains,
                        kind: NussbaumKind = QUAD_SIN) -> StepOutput:
    """Evaluate every step of the recursion without changing ``state``."""
    x = np.asarray(x_i, dtype=float).ravel()
    n = x.size
    if gains.n != n or len(state.grids) != n:
        raise ContractViolation("gains, grids and state dimension disagree")
    params = state.params
    mu_hat = float(params[-1])
    z = np.zeros(n)
    eta = np.zeros(n)
    tau = np.zeros(n)
    ddot = np.zeros(n)
    rates = []
    z[0] = x[0] - y_ri
    h = h_function(z[0], gains.varpi, psi_sq)
    for j in range(n):
        if j:
            z[j] = x[j] - tau[j - 1]
        phi = basis(state.grids[j], regressor_input(j, x, z, tau, state.regressor))
        theta = params[state.slices[j]]
        fls = float(theta @ phi)
        extra = mu_hat * h - d_alpha_yr if j == 0 else 0.0
        tau[j], eta[j], ddot[j] = _nussbaum_law(gains.eta_gain(j), z[j], fls, kind,
                                                state.delta[j], extra)
        rates.append(theta_rate(gains.Lambda[j], phi, z[j], gains.rho[j], theta))
    mrate = mu_rate(gains.gamma1, z[0], h, gains.gamma2, mu_hat)
    return StepOutput(u=float(tau[-1]), z=z, eta=eta, tau=tau, delta_dot=ddot,
                      theta_rates=tuple(rates), mu_rate=mrate, h=h)


def advance(state: AdaptiveState, out: StepOutput, dt: float) -> None:
    """Move ``state`` one step forward using the rates in ``out``."""
    state.delta = state.delta + dt * out.delta_dot
    state.tau_prev = out.tau[:-1].copy()
    frac_step(state.alpha, state.buffer, np.r_[np.concatenate(out.theta_rates), out.mu_rate], dt)


def controller_step(spec_set: Sequence[SubsystemSpec], i: int, state: AdaptiveState, x_i,
                    y_all, refs: tuple[float, float], gains: ControllerGains, dt: float,
                    kind: NussbaumKind = QUAD_SIN) -> StepOutput:
    """Evaluate subsystem ``i``'s controller and advance its adaptive state.

    ``refs`` is ``(y_r, D^alpha y_r)`` at the current time. Only the local
    state ``x_i`` and output ``y_all[i]`` enter the computation.
    """
    y_i = float(np.asarray(y_all, dtype=float)[i])
    psi_sq = psi_square_sum(spec_set, i, y_i)
    out = evaluate_controller(state, x_i, refs[0], refs[1], psi_sq, gains, kind)
    advance(state, out, dt)
    return out

# }}}
