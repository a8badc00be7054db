r"""Interconnected fractional-order plants in strict-feedback form.

Subsystem ``i`` with state ``x_i`` of length ``n`` evolves as

.. math::

    D^\alpha x_{i,j} &= g_{i,j}(t) x_{i,j+1} + \phi_{i,j}(x_i) + f_{i,j}, \quad j < n \\
    D^\alpha x_{i,n} &= g_{i,n}(t) u_i + \phi_{i,n}(x_i) + d_i(t) + f_{i,n}

with output ``y_i = x_{i,1}``. The interaction terms ``f`` couple the
subsystems; each is bounded by ``sum_q beta_{j,q} |psi_{j,q}(y_q)|``.

Callables receive numpy arrays so that they can be evaluated pointwise or
over a whole sampling grid: ``phi(x)`` gets the local state with shape
``(n, ...)``; ``f(y, xs)`` gets the outputs with shape ``(N, ...)`` and the
tuple of every subsystem state (used only by the physical PMSM coupling,
whose ``omega * i_q`` term involves a non-output state).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DomainError
from .fracnum import check_order

TimeFn = Callable[[float], float]
StateFn = Callable[[np.ndarray], np.ndarray]
InteractionFn = Callable[[np.ndarray, tuple], np.ndarray]


def _zero_state(x):
    return np.zeros_like(x[0])


def _zero_interaction(y, xs):
    return np.zeros_like(y[0])


def _zero_time(t):
    return 0.0


def _const(c: float) -> TimeFn:
    return lambda t: c + 0.0 * t


def _identity(y):
    return y


@dataclass(frozen=True)
class SubsystemSpec:
    """One subsystem: dimensions, gain signals, nonlinearities, couplings.

    ``psi_bounds[j][q]`` is the bound function of ``f_{i,j}`` on output
    ``q`` (``None`` when ``f_{i,j}`` does not depend on ``y_q``) and
    ``beta[j][q]`` its coefficient. ``gain_bounds[j]`` is the declared
    interval ``(lo, hi)`` of ``g_{i,j}``, which must exclude zero.
    ``state_couplings[j]``, when given, adds a nonlinearity ``c(xs)`` that
    reads other subsystems' states; it is part of ``phi`` rather than of
    the output interactions and so is not covered by the ``beta`` bounds.
    """

    n: int
    gains: tuple[TimeFn, ...]
    phis: tuple[StateFn, ...]
    interactions: tuple[InteractionFn, ...]
    disturbance: TimeFn
    psi_bounds: tuple[tuple[Callable | None, ...], ...]
    beta: np.ndarray
    dist_bound: float
    gain_bounds: tuple[tuple[float, float], ...]
    x0: np.ndarray
    name: str = ""
    state_couplings: tuple[Callable | None, ...] = ()

    def __post_init__(self) -> None:
        n = self.n
        if n < 1:
            raise DomainError(f"subsystem order must be >= 1, got {n}")
        for label, seq in (("gains", self.gains), ("phis", self.phis),
                           ("interactions", self.interactions), ("psi_bounds", self.psi_bounds),
                           ("gain_bounds", self.gain_bounds)):
            if len(seq) != n:
                raise ContractViolation(f"{label} has {len(seq)} entries, subsystem order is {n}")
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.beta.shape[0] != n or self.x0.shape != (n,):
            raise ContractViolation("beta rows and x0 must match the subsystem order")
        for lo, hi in self.gain_bounds:
            if not lo <= hi or lo <= 0 <= hi:
                raise DomainError(f"gain interval [{lo}, {hi}] must exclude zero")
        if self.dist_bound < 0:
            raise DomainError("disturbance bound must be nonnegative")


@dataclass(frozen=True)
class ReferenceSignal:
    """Reference ``y_r`` with its first derivative.

    ``d_alpha`` optionally gives the Caputo derivative in closed form; when
    absent it is computed numerically from ``dy``.
    """

    y: TimeFn
    dy: TimeFn
    d_alpha: Callable[[float, float], float] | None = None


@dataclass(frozen=True)
class Scenario:
    """A complete interconnected plant with references and design defaults.

    ``design`` maps dotted gain keys (see :func:`fracnuss.sim.build_gains`) to
    values; ``box`` is the half-width of the declared operating box of the
    outputs (and, for hidden-state couplings, of every state).
    """

    name: str
    alpha: float
    subsystems: tuple[SubsystemSpec, ...]
    references: tuple[ReferenceSignal, ...]
    box: float = 3.0
    design: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_order(self.alpha)
        if len(self.subsystems) != len(self.references):
            raise ContractViolation("need one reference per subsystem")
        N = len(self.subsystems)
        for s in self.subsystems:
            if s.beta.shape != (s.n, N) or any(len(r) != N for r in s.psi_bounds):
                raise ContractViolation("beta and psi_bounds need one column per subsystem")

    @property
    def n_sub(self) -> int:
        return len(self.subsystems)


def plant_rhs(spec: SubsystemSpec, t: float, x_i, u_i: float, y_all, xs: tuple | None = None) -> np.ndarray:
    """Right-hand side of subsystem ``spec`` at time ``t``.

    ``xs`` is the tuple of all subsystem states; it is only consulted by
    interaction terms that involve non-output states.
    """
    x = np.asarray(x_i, dtype=float)
    if x.shape != (spec.n,):
        raise ContractViolation(f"state has shape {x.shape}, expected ({spec.n},)")
    y = np.asarray(y_all, dtype=float)
    out = np.empty(spec.n)
    for j in range(spec.n):
        drive = x[j + 1] if j + 1 < spec.n else u_i
        out[j] = spec.gains[j](t) * drive + spec.phis[j](x) + spec.interactions[j](y, xs)
        if j < len(spec.state_couplings) and spec.state_couplings[j] is not None:
            out[j] += spec.state_couplings[j](xs)
    out[-1] += spec.disturbance(t)
    return out


def negate_gains(scenario: Scenario) -> Scenario:
    """Copy of ``scenario`` with every gain ``g_{i,j}`` replaced by ``-g_{i,j}``."""
    subs = []
    for s in scenario.subsystems:
        gains = tuple((lambda g: (lambda t: -g(t)))(g) for g in s.gains)
        bounds = tuple((-hi, -lo) for lo, hi in s.gain_bounds)
        subs.append(replace(s, gains=gains, gain_bounds=bounds))
    return replace(scenario, name=scenario.name + "-negated", subsystems=tuple(subs))


# {{{ built-in scenarios

def _sine_reference(omega: float = 2.0) -> ReferenceSignal:
    return ReferenceSignal(
        y=lambda t: np.sin(omega * t),
        dy=lambda t: omega * np.cos(omega * t),
    )


ZERO_REFERENCE = ReferenceSignal(y=_zero_time, dy=_zero_time, d_alpha=lambda t, a: 0.0)


def scenario_example_a() -> Scenario:
    """Four second-order subsystems with output couplings, ``alpha = 0.8``.

    Input gains ``2 + sin t``, ``2``, ``3 - cos t`` and ``3``; the first-row
    gains are 1. Interaction bounds use ``psi(y_q) = y_q`` with ``beta``
    read from the coupling coefficients (``|sin y| <= |y|``).
    """
    ident = _identity
    one = _const(1.0)

    input_gains = (
        (lambda t: 2.0 + np.sin(t), (1.0, 3.0)),
        (_const(2.0), (2.0, 2.0)),
        (lambda t: 3.0 - np.cos(t), (2.0, 4.0)),
        (_const(3.0), (3.0, 3.0)),
    )
    phis = (
        (lambda x: 0.6 * x[0] ** 2, lambda x: x[1] / (1.0 + x[0] ** 2)),
        (lambda x: 0.5 * np.exp(-x[0] ** 2), lambda x: np.exp(-x[1] ** 2) * np.sin(x[0])),
        (lambda x: x[0] ** 2, None),  # row 2 couples to x_12, see below
        (lambda x: 0.0 * x[0], lambda x: x[0] * x[1] ** 2),
    )
    # subsystem 3's second nonlinearity (1 - x31^2) x12 reads subsystem 1's
    # second state
    phi32 = lambda xs: (1.0 - xs[2][0] ** 2) * xs[0][1]  # noqa: E731
    couplings = (
        (lambda y, xs: 0.5 * y[1] + y[2] + np.sin(y[3]), (0.0, 0.5, 1.0, 1.0)),
        (lambda y, xs: y[0] + 0.6 * y[2] + 0.7 * y[3], (1.0, 0.0, 0.6, 0.7)),
        (lambda y, xs: y[0] + np.sin(y[1]) + y[3], (1.0, 1.0, 0.0, 1.0)),
        (lambda y, xs: y[0] + np.sin(y[1]) + 0.6 * y[2], (1.0, 1.0, 0.6, 0.0)),
    )
    dists = (
        (lambda t: 0.3 * np.cos(np.pi * t), 0.3),
        (lambda t: 0.3 * np.cos(np.pi * t), 0.3),
        (lambda t: 0.4 * np.sin(np.pi * t), 0.4),
        (lambda t: 0.4 * np.sin(np.pi * t), 0.4),
    )
    subs = []
    for i in range(4):
        g, gb = input_gains[i]
        f, coeffs = couplings[i]
        phi1, phi2 = phis[i]
        couple = (None, None)
        if phi2 is None:
            phi2 = _zero_state
            couple = (None, phi32)
        psi_row2 = tuple(ident if c > 0 else None for c in coeffs)
        subs.append(SubsystemSpec(
            n=2,
            gains=(one, g),
            phis=(phi1, phi2),
            interactions=(_zero_interaction, f),
            disturbance=dists[i][0],
            psi_bounds=((None,) * 4, psi_row2),
            beta=np.array([[0.0] * 4, list(coeffs)]),
            dist_bound=dists[i][1],
            gain_bounds=((1.0, 1.0), gb),
            x0=np.array([0.1, 0.1]),
            name=f"sub{i + 1}",
            state_couplings=couple,
        ))
    design = {f"sub{i + 1}.cbar1": c for i, c in enumerate((3.0, 5.0, 4.0, 3.0))}
    for i in range(4):
        # a zero Nussbaum argument switches the controller off (N(0) = 0) and
        # the open loop escapes; these starting points are stable for either
        # sign of the input gains
        design.update({f"sub{i + 1}.cbar2": 3.0, f"sub{i + 1}.delta1": -1.5,
                       f"sub{i + 1}.delta2": 1.0})
    return Scenario("example_a", 0.8, tuple(subs), tuple(_sine_reference() for _ in range(4)),
                    box=3.0, design=design)


def scenario_pmsm(kappa: float = 2.0, nu: float = 3.0, g1: float = 3.0, g2: float = 3.0,
                  alpha: float = 0.9) -> Scenario:
    """Permanent-magnet synchronous motor split into two subsystems.

    Subsystem 1 holds rotor speed and q-axis current ``(omega, i_q)`` driven
    by ``u_q``; subsystem 2 holds the d-axis current ``i_d`` driven by
    ``u_d``. The local linear terms are nonlinearities ``phi``; the products
    ``-omega i_d`` and ``omega i_q`` are the interactions.
    """
    for label, v in (("kappa", kappa), ("g1", g1), ("g2", g2)):
        if v == 0:
            raise DomainError(f"PMSM parameter {label} must be nonzero")
    box = 3.0

    def interval(c: float) -> tuple[float, float]:
        return (c, c)

    sub1 = SubsystemSpec(
        n=2,
        gains=(_const(kappa), _const(g1)),
        phis=(lambda x: -kappa * x[0], lambda x: -x[1] + nu * x[0]),
        interactions=(_zero_interaction, lambda y, xs: -y[0] * y[1]),
        disturbance=_zero_time,
        # |omega i_d| <= box * |i_d| on the operating box
        psi_bounds=((None, None), (None, _identity)),
        beta=np.array([[0.0, 0.0], [0.0, box]]),
        dist_bound=0.0,
        gain_bounds=(interval(kappa), interval(g1)),
        x0=np.array([0.1, 0.1]),
        name="speed",
    )
    sub2 = SubsystemSpec(
        n=1,
        gains=(_const(g2),),
        phis=(lambda x: -x[0],),
        # omega * i_q with i_q a non-output state: |.| <= box * |omega|
        interactions=(lambda y, xs: y[0] * xs[0][1],),
        disturbance=_zero_time,
        psi_bounds=((_identity, None),),
        beta=np.array([[box, 0.0]]),
        dist_bound=0.0,
        gain_bounds=(interval(g2),),
        x0=np.array([0.1]),
        name="d-current",
    )
    design = {"sub1.cbar1": 10.0, "sub1.cbar2": 3.0, "sub2.cbar1": 3.0,
              "sub1.delta1": -1.5, "sub1.delta2": 1.0, "sub2.delta1": -1.5}
    return Scenario("pmsm", alpha, (sub1, sub2), (_sine_reference(), ZERO_REFERENCE),
                    box=box, design=design)


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "example_a": scenario_example_a,
    "pmsm": scenario_pmsm,
}

# }}}


# {{{ assumption checks

@dataclass
class Assumption2Report:
    """Worst ratio ``|f| / sum_q beta |psi|`` per interaction channel.

    ``ratios[(i, j)]`` is the largest ratio seen (0 for ``f`` identically
    zero on the grid); ``witness[(i, j)]`` is the output sample at which it
    occurred when the ratio exceeds one.
    """

    ratios: dict[tuple[int, int], float]
    witness: dict[tuple[int, int], np.ndarray]

    @property
    def passed(self) -> bool:
        return not self.witness

    @property
    def max_ratio(self) -> float:
        return max(self.ratios.values(), default=0.0)


def _hidden_states(scenario: Scenario, y: np.ndarray, hidden: np.ndarray) -> tuple:
    # states on a sampling grid: outputs from y, every other component from hidden
    xs = []
    col = 0
    for i, s in enumerate(scenario.subsystems):
        rows = [y[i]]
        for _ in range(1, s.n):
            rows.append(hidden[col])
            col += 1
        xs.append(np.array(rows))
    return tuple(xs)


def check_assumption2(scenario: Scenario, y_grid: np.ndarray | None = None, *,
                      points_per_axis: int = 7, hidden_values: Sequence[float] | None = None,
                      rtol: float = 1e-12) -> Assumption2Report:
    """Check the interaction bounds on a grid of the operating box.

    ``y_grid`` has shape ``(M, N)``; by default it is the tensor grid with
    ``points_per_axis`` points per output on ``[-box, box]``. Non-output
    states take every combination of ``hidden_values`` (default ``-box, 0,
    box``), which covers the extremes of the couplings that are linear in
    them.
    """
    N = scenario.n_sub
    box = scenario.box
    if y_grid is None:
        axis = np.linspace(-box, box, points_per_axis)
        y_grid = np.array(list(itertools.product(axis, repeat=N)))
    y_grid = np.asarray(y_grid, dtype=float).reshape(-1, N)
    n_hidden = sum(s.n - 1 for s in scenario.subsystems)
    hv = (-box, 0.0, box) if hidden_values is None else tuple(hidden_values)
    combos = np.array(list(itertools.product(hv, repeat=n_hidden))).reshape(-1, n_hidden)
    # every y sample paired with every hidden combination, as columns
    Y = np.repeat(y_grid, len(combos), axis=0).T
    H = np.tile(combos, (len(y_grid), 1)).T
    xs = _hidden_states(scenario, Y, H)

    ratios: dict[tuple[int, int], float] = {}
    witness: dict[tuple[int, int], np.ndarray] = {}
    for i, s in enumerate(scenario.subsystems):
        for j in range(s.n):
            f = np.abs(np.broadcast_to(s.interactions[j](Y, xs), Y.shape[1:]))
            bound = np.zeros(Y.shape[1])
            for q in range(N):
                psi = s.psi_bounds[j][q]
                if psi is not None:
                    bound = bound + s.beta[j, q] * np.abs(psi(Y[q]))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(f == 0, 0.0, f / bound)
            k = int(np.argmax(r))
            ratios[(i, j)] = float(r[k])
            if f[k] > bound[k] * (1.0 + rtol):
                witness[(i, j)] = np.r_[Y[:, k], H[:, k]]
    return Assumption2Report(ratios, witness)


def check_gain_signs(scenario: Scenario, t_final: float, samples: int = 10_000) -> bool:
    """Whether every gain keeps one sign and stays in its declared interval."""
    t = np.linspace(0.0, t_final, samples)
    for s in scenario.subsystems:
        for g, (lo, hi) in zip(s.gains, s.gain_bounds):
            v = np.broadcast_to(g(t), t.shape)
            if not (np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)):
                return False
            if not (np.all(v > 0) or np.all(v < 0)):
                return False
    return True

# }}}
