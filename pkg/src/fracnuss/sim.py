"""Closed-loop simulation of an interconnected plant under decentralized
adaptive control, with logging, metrics and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import (
    DEFAULT_GAMMA1,
    DEFAULT_GAMMA2,
    DEFAULT_RHO,
    DEFAULT_VARPI,
    AdaptiveState,
    ControllerGains,
    StepOutput,
    advance,
    evaluate_controller,
    psi_square_sum,
)
from .errors import ContractViolation, DomainError, NumericError
from .fracnum import MemoryBuffer, caputo_derivative_grid, check_order, frac_step, gl_weights
from .nussbaum import QUAD_SIN, BoundReport, NussbaumKind, nussbaum_array, theorem1_bound
from .plant import SCENARIOS, Scenario, negate_gains, plant_rhs, scenario_pmsm

# states beyond this magnitude count as divergence
BLOWUP = 1e8
TAIL_FRACTION = 0.25
WINDOW_FRACTION = 0.10


@dataclass
class SimConfig:
    """Everything that determines a run.

    ``gain_overrides`` uses dotted keys ``sub<i>.<name>`` (or ``all.<name>``)
    where ``<name>`` is one of ``cbar<j>``, ``rho`` / ``rho<j>``,
    ``lambda`` / ``lambda<j>``, ``varpi``, ``gamma1``, ``gamma2``,
    ``delta<j>`` (initial Nussbaum argument). ``scenario_params`` feeds the
    scenario factory (e.g. ``kappa`` for ``pmsm``).
    """

    scenario: str | Scenario = "example_a"
    dt: float = 1e-3
    t_final: float = 20.0
    alpha_override: float | None = None
    memory_truncation: int | None = None
    gain_overrides: dict[str, float] = field(default_factory=dict)
    output_path: str | None = None
    log_stride: int = 1
    kind: NussbaumKind = QUAD_SIN
    regressor: str = "full"
    negate_gains: bool = False
    scenario_params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 10 * self.dt:
            raise DomainError(f"t_final must be at least 10 dt, got {self.t_final}")
        if self.log_stride < 1:
            raise DomainError(f"log stride must be >= 1, got {self.log_stride}")
        if self.alpha_override is not None:
            check_order(self.alpha_override)
        if self.memory_truncation is not None and self.memory_truncation < 1:
            raise DomainError("memory truncation must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def build_scenario(self) -> Scenario:
        if isinstance(self.scenario, Scenario):
            sc = self.scenario
        else:
            factory = SCENARIOS.get(self.scenario)
            if factory is None:
                raise DomainError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
            params = dict(self.scenario_params)
            if factory is scenario_pmsm and self.alpha_override is not None:
                params["alpha"] = self.alpha_override
            sc = factory(**params)
        if self.alpha_override is not None:
            sc = replace(sc, alpha=float(self.alpha_override))
        if self.negate_gains:
            sc = negate_gains(sc)
        return sc


def build_gains(scenario: Scenario, overrides: dict[str, float] | None = None
                ) -> tuple[list[ControllerGains], list[np.ndarray]]:
    """Controller gains and initial Nussbaum arguments for every subsystem."""
    merged = dict(scenario.design)
    overrides = dict(overrides or {})
    for key, val in overrides.items():
        if key.startswith("all."):
            for i in range(scenario.n_sub):
                merged[f"sub{i + 1}.{key[4:]}"] = val
    merged.update({k: v for k, v in overrides.items() if not k.startswith("all.")})

    gains, deltas = [], []
    known = set()
    for i, spec in enumerate(scenario.subsystems):
        pre = f"sub{i + 1}."
        n = spec.n

        def pick(name: str, j: int | None, default: float) -> float:
            for key in ((f"{pre}{name}{j + 1}",) if j is not None else ()) + (f"{pre}{name}",):
                if key in merged:
                    known.add(key)
                    return float(merged[key])
            return default

        cbar = [pick("cbar", j, 3.0) for j in range(n)]
        kw = dict(
            rho=tuple(pick("rho", j, DEFAULT_RHO) for j in range(n)),
            Lambda=tuple(pick("lambda", j, 1.0) for j in range(n)),
            varpi=pick("varpi", None, DEFAULT_VARPI),
            gamma1=pick("gamma1", None, DEFAULT_GAMMA1),
            gamma2=pick("gamma2", None, DEFAULT_GAMMA2),
        )
        gains.append(ControllerGains.from_cbar(cbar, **kw))
        deltas.append(np.array([pick("delta", j, 0.0) for j in range(n)]))
    unknown = set(merged) - known
    if unknown:
        raise DomainError(f"unknown gain keys: {sorted(unknown)}")
    return gains, deltas


# {{{ records

@dataclass(frozen=True)
class SimRecord:
    """One logged time step; per-subsystem tuples are indexed by subsystem."""

    t: float
    y: tuple[float, ...]
    yr: tuple[float, ...]
    z: tuple[tuple[float, ...], ...]
    u: tuple[float, ...]
    theta_norm: tuple[tuple[float, ...], ...]
    mu_hat: tuple[float, ...]
    delta: tuple[tuple[float, ...], ...]
    g: tuple[tuple[float, ...], ...]
    V: float


def csv_columns(orders: Sequence[int]) -> list[str]:
    """Stable CSV column order for subsystems of the given orders."""
    cols = ["t"]
    for i, n in enumerate(orders, start=1):
        cols += [f"y{i}", f"yr{i}"]
        cols += [f"z{i}_{j}" for j in range(1, n + 1)]
        cols += [f"u{i}"]
        cols += [f"theta{i}_{j}" for j in range(1, n + 1)]
        cols += [f"mu{i}"]
        cols += [f"delta{i}_{j}" for j in range(1, n + 1)]
        cols += [f"g{i}_{j}" for j in range(1, n + 1)]
    cols.append("V")
    return cols


def _flatten(r: SimRecord) -> list[float]:
    row = [r.t]
    for i in range(len(r.y)):
        row += [r.y[i], r.yr[i], *r.z[i], r.u[i], *r.theta_norm[i], r.mu_hat[i], *r.delta[i], *r.g[i]]
    row.append(r.V)
    return row


def write_csv(records: Sequence[SimRecord], path: str | Path, orders: Sequence[int] | None = None) -> None:
    """Header plus one row per record, floats written with ``repr`` so they
    parse back exactly."""
    if orders is None:
        if not records:
            raise ContractViolation("subsystem orders are needed to write the header of an empty file")
        orders = [len(z) for z in records[0].z]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_columns(orders))
            for r in records:
                w.writerow([repr(float(v)) for v in _flatten(r)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path: str | Path) -> list[SimRecord]:
    """Parse a file written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractViolation(f"{path} is empty")
    header = rows[0]
    orders = []
    i = 1
    while f"y{i}" in header:
        orders.append(sum(1 for h in header if h.startswith(f"z{i}_")))
        i += 1
    if header != csv_columns(orders):
        raise ContractViolation(f"{path} does not have the simulation column layout")
    out = []
    for row in rows[1:]:
        v = [float(s) for s in row]
        pos = 1
        y, yr, z, u, th, mu, de, g = [], [], [], [], [], [], [], []
        for n in orders:
            y.append(v[pos]); yr.append(v[pos + 1]); pos += 2  # noqa: E702
            z.append(tuple(v[pos:pos + n])); pos += n  # noqa: E702
            u.append(v[pos]); pos += 1  # noqa: E702
            th.append(tuple(v[pos:pos + n])); pos += n  # noqa: E702
            mu.append(v[pos]); pos += 1  # noqa: E702
            de.append(tuple(v[pos:pos + n])); pos += n  # noqa: E702
            g.append(tuple(v[pos:pos + n])); pos += n  # noqa: E702
        out.append(SimRecord(v[0], tuple(y), tuple(yr), tuple(z), tuple(u), tuple(th),
                             tuple(mu), tuple(de), tuple(g), v[pos]))
    return out

# }}}


# {{{ simulation

@dataclass
class SimResult:
    """Logged records of a run plus what is needed to analyse them."""

    records: list[SimRecord]
    diverged: bool
    alpha: float
    dt: float
    gains: list[ControllerGains]
    kind: NussbaumKind
    orders: tuple[int, ...]
    message: str = ""

    def column(self, name: str) -> np.ndarray:
        idx = csv_columns(self.orders).index(name)
        return np.array([_flatten(r)[idx] for r in self.records])

    def table(self) -> dict[str, np.ndarray]:
        cols = csv_columns(self.orders)
        data = np.array([_flatten(r) for r in self.records]).reshape(-1, len(cols))
        return {c: data[:, k] for k, c in enumerate(cols)}


def _lyapunov(outs: Sequence[StepOutput], states: Sequence[AdaptiveState],
              gains: Sequence[ControllerGains]) -> float:
    # sum of z^2 / 2 + theta' Lambda^-1 theta / 2 + mu_hat^2 / (2 gamma1), with
    # the ideal weights and bound taken as zero
    total = 0.0
    for out, st, gn in zip(outs, states, gains):
        total += 0.5 * float(out.z @ out.z)
        p = st.params
        for j, sl in enumerate(st.slices):
            th = p[sl]
            lam = np.asarray(gn.Lambda[j], dtype=float)
            total += 0.5 * float(th @ (th / lam if lam.ndim == 0 else np.linalg.solve(lam, th)))
        total += 0.5 * st.mu_hat**2 / gn.gamma1
    return total


def reference_arrays(scenario: Scenario, alpha: float, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference values and their Caputo derivatives on the simulation grid."""
    t = np.arange(n_steps + 1) * dt
    yr = np.zeros((scenario.n_sub, n_steps + 1))
    dyr = np.zeros_like(yr)
    for i, ref in enumerate(scenario.references):
        yr[i] = np.broadcast_to(ref.y(t), t.shape)
        if ref.d_alpha is not None:
            dyr[i] = [ref.d_alpha(tk, alpha) for tk in t]
        else:
            dyr[i] = caputo_derivative_grid(np.broadcast_to(ref.dy(t), t.shape), alpha, dt)
    return yr, dyr


def run_closed_loop(config: SimConfig) -> SimResult:
    """Simulate ``config`` and return the logged trajectory.

    Each step takes a snapshot of the outputs, evaluates every controller
    on it, then advances the plant and the adaptive states. The run stops
    early, flagged as diverged, at the first non-finite or exploding value.
    """
    sc = config.build_scenario()
    alpha = check_order(sc.alpha)
    dt = config.dt
    n_steps = config.n_steps
    gains, deltas = build_gains(sc, config.gain_overrides)
    specs = sc.subsystems
    orders = tuple(s.n for s in specs)
    offsets = np.cumsum((0,) + orders)
    states = [
        AdaptiveState.initial(s.n, alpha, dt, regressor=config.regressor,
                              truncation=config.memory_truncation, delta0=deltas[i])
        for i, s in enumerate(specs)
    ]
    plant = MemoryBuffer(np.concatenate([s.x0 for s in specs]), dt, truncation=config.memory_truncation)
    yr, dyr = reference_arrays(sc, alpha, dt, n_steps)

    records: list[SimRecord] = []
    diverged = False
    message = ""
    x = plant.last
    for k in range(n_steps + 1):
        t = k * dt
        xs = tuple(x[offsets[i]:offsets[i + 1]] for i in range(len(specs)))
        y = np.array([xi[0] for xi in xs])
        try:
            outs = [
                evaluate_controller(states[i], xs[i], yr[i, k], dyr[i, k],
                                    psi_square_sum(specs, i, y[i]), gains[i], config.kind)
                for i in range(len(specs))
            ]
        except NumericError as exc:
            diverged, message = True, f"t={t:.6g}: {exc}"
            break
        if k % config.log_stride == 0 or k == n_steps:
            g = tuple(tuple(float(gf(t)) for gf in s.gains) for s in specs)
            rec = SimRecord(
                t=t,
                y=tuple(float(v) for v in y),
                yr=tuple(float(v) for v in yr[:, k]),
                z=tuple(tuple(float(v) for v in o.z) for o in outs),
                u=tuple(o.u for o in outs),
                theta_norm=tuple(tuple(float(np.linalg.norm(st.params[sl])) for sl in st.slices)
                                 for st in states),
                mu_hat=tuple(st.mu_hat for st in states),
                delta=tuple(tuple(float(d) for d in st.delta) for st in states),
                g=g,
                V=_lyapunov(outs, states, gains),
            )
            if not all(math.isfinite(v) and abs(v) < BLOWUP for v in _flatten(rec)):
                diverged, message = True, f"t={t:.6g}: non-finite or exploding signal"
                break
            records.append(rec)
        if k == n_steps:
            break
        rhs = np.concatenate([plant_rhs(s, t, xs[i], outs[i].u, y, xs) for i, s in enumerate(specs)])
        for st, out in zip(states, outs):
            advance(st, out, dt)
        x = frac_step(alpha, plant, rhs, dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
            diverged, message = True, f"t={t + dt:.6g}: plant state left the finite range"
            break
    return SimResult(records, diverged, alpha, dt, gains, config.kind, orders, message)

# }}}


# {{{ metrics

@dataclass
class MetricsReport:
    """Summary of a run.

    ``sup_error_tail[i]`` is the largest ``|z_{i,1}|`` over the final quarter
    of the horizon; ``sup_all`` the largest magnitude of every logged
    signal; ``bounded_flags`` compares, per adaptive signal, the range over
    the last tenth of the run with the range over the first tenth: a signal
    counts as bounded when the late spread is strictly smaller (or zero).
    """

    sup_error_tail: list[float]
    sup_all: dict[str, float]
    bounded_flags: dict[str, bool]
    theorem1_slack: float | None
    diverged: bool
    n_records: int

    @property
    def all_bounded(self) -> bool:
        return all(self.bounded_flags.values())

    def lines(self) -> list[str]:
        out = [f"records {self.n_records}", f"diverged {self.diverged}"]
        for i, e in enumerate(self.sup_error_tail, start=1):
            out.append(f"sup_error_tail{i} {e:.6g}")
        for name in sorted(self.sup_all):
            out.append(f"sup_{name} {self.sup_all[name]:.6g}")
        for name in sorted(self.bounded_flags):
            out.append(f"bounded_{name} {self.bounded_flags[name]}")
        if self.theorem1_slack is not None:
            out.append(f"theorem1_slack {self.theorem1_slack:.6g}")
        return out


def _window_range(v: np.ndarray, start: int, stop: int) -> float:
    w = v[start:stop]
    return float(w.max() - w.min()) if len(w) else 0.0


def _scale(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def _settled(first: float, last: float, scale: float) -> bool:
    # strictly shrinking spread; a steady ramp has equal spreads and fails
    if last <= 1e-12 * max(scale, 1.0):
        return True
    return last < (1.0 - 1e-6) * first


def compute_metrics(records: Sequence[SimRecord], *, diverged: bool = False,
                    bound: BoundReport | None = None) -> MetricsReport:
    """Tail errors, signal bounds and boundedness flags of a run."""
    if not records:
        raise ContractViolation("no records to summarize")
    orders = [len(z) for z in records[0].z]
    cols = csv_columns(orders)
    data = np.array([_flatten(r) for r in records])
    t = data[:, 0]
    span = t[-1] - t[0]
    tail = t >= t[-1] - TAIL_FRACTION * span - 1e-12
    sup_tail = [float(np.max(np.abs(data[tail, cols.index(f"z{i}_1")]))) for i in range(1, len(orders) + 1)]
    sup_all = {c: float(np.max(np.abs(data[:, k]))) for k, c in enumerate(cols) if c != "t"}
    m = len(t)
    w = max(1, int(round(WINDOW_FRACTION * m)))
    flags = {}
    for k, c in enumerate(cols):
        if c.startswith(("theta", "mu", "delta", "u")):
            flags[c] = _settled(_window_range(data[:, k], 0, w), _window_range(data[:, k], m - w, m),
                                _scale(data[:, k]))
    slack = None if bound is None else float(np.min(bound.slack))
    return MetricsReport(sup_tail, sup_all, flags, slack, diverged, m)

# }}}


# {{{ Nussbaum bound check on a run

def estimate_zeta(v: np.ndarray, drive: np.ndarray, alpha: float, lam: float, dt: float) -> float:
    """Smallest constant ``zeta`` with ``D^a V <= -lam V + drive + zeta`` on the grid.

    ``D^a V`` is the GL difference quotient of the samples; the result is
    floored at a tiny positive value so that the bound stays well defined.
    """
    n = len(v)
    w = gl_weights(alpha, n - 1)
    y = v - v[0]
    # GL derivative at t_k uses samples up to t_k
    dv = np.convolve(w, y)[:n] / dt**alpha
    resid = dv + lam * v - drive
    return max(float(np.max(resid)), 1e-12)


def theorem1_check(records: Sequence[SimRecord], alpha: float, dt: float, lam: float,
                   kind: NussbaumKind = QUAD_SIN) -> BoundReport:
    """Compare the logged ``V`` with its Nussbaum bound.

    Every Nussbaum argument contributes one channel weighted by the plant
    gain of its step; ``zeta`` is estimated from the run itself.
    """
    if len(records) < 2:
        raise ContractViolation("need at least two records")
    t = np.array([r.t for r in records])
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ContractViolation("records must be logged on every step of spacing dt")
    v = np.array([r.V for r in records])
    deltas = np.array([[d for dd in r.delta for d in dd] for r in records]).T
    gs = np.array([[g for gg in r.g for g in gg] for r in records]).T
    drive = np.zeros(len(t))
    for gi, di in zip(gs, deltas):
        drive += (gi * nussbaum_array(kind, di) + 1.0) * np.gradient(di, dt)
    zeta = estimate_zeta(v, drive, alpha, lam, dt)
    return theorem1_bound(alpha, lam, zeta, float(v[0]), gs, deltas, kind, dt, v_traj=v)

# }}}
