"""Command-line front end: ``fracnuss run | verify | check | scenarios``.

Exit codes: 0 success, 1 usage error, 2 diverged run, 3 I/O failure,
4 a verification or assumption check failed.
"""

from __future__ import annotations

import argparse
import importlib.util
import sys
from pathlib import Path
from typing import Sequence

from .errors import FracNussError
from .nussbaum import QUAD_SIN, NussbaumKind, check_nussbaum_property
from .plant import SCENARIOS, Scenario, check_assumption2, check_gain_signs
from .sim import SimConfig, compute_metrics, read_csv, run_closed_loop, theorem1_check, write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_IO = 3
EXIT_CHECK_FAILED = 4

DEFAULT_LAMBDA = 0.1

# config-file keys under "sim." (the prefix is optional) and their types
_SIM_KEYS = {
    "scenario": str,
    "dt": float,
    "t_final": float,
    "alpha": float,
    "memory_truncation": int,
    "log_stride": int,
    "kind": str,
    "regressor": str,
    "negate_gains": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "out": str,
}


class UsageError(Exception):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{key}: not a number: {text!r}") from None


def split_config(entries: dict[str, str]) -> tuple[dict, dict[str, float], dict[str, float]]:
    """Sort config entries into simulation settings, gain overrides and
    scenario parameters."""
    sim: dict = {}
    gains: dict[str, float] = {}
    params: dict[str, float] = {}
    for key, value in entries.items():
        if key.startswith("gains."):
            gains[key[len("gains."):]] = _float(key, value)
        elif key.startswith("scenario."):
            params[key[len("scenario."):]] = _float(key, value)
        else:
            name = key[len("sim."):] if key.startswith("sim.") else key
            if name not in _SIM_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                sim[name] = _SIM_KEYS[name](value)
            except ValueError:
                raise UsageError(f"{key}: bad value {value!r}") from None
    return sim, gains, params


def load_scenario_file(path: str) -> Scenario:
    """Import a Python file defining ``build_scenario() -> Scenario``."""
    spec = importlib.util.spec_from_file_location("fracnuss_custom_scenario", path)
    if spec is None or spec.loader is None:
        raise OSError(f"cannot load scenario file {path}")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    factory = getattr(module, "build_scenario", None)
    if factory is None:
        raise UsageError(f"{path} does not define build_scenario()")
    sc = factory()
    if not isinstance(sc, Scenario):
        raise UsageError(f"{path}: build_scenario() must return a Scenario")
    return sc


def resolve_scenario(name: str, params: dict[str, float]) -> str | Scenario:
    if name in SCENARIOS:
        return name
    if name.endswith(".py") or Path(name).exists():
        if params:
            raise UsageError("scenario.* parameters only apply to built-in scenarios")
        return load_scenario_file(name)
    raise UsageError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)} or a .py file")


def parse_gain(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"--gain expects key=value, got {text!r}")
    return key.strip(), _float(key, value.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracnuss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="example_a, pmsm or a .py file defining build_scenario()")
    common.add_argument("--alpha", type=float, help="override the fractional order")
    common.add_argument("--config", help="flat key = value file (see README)")
    common.add_argument("--kind", help="Nussbaum kind, e.g. quad-sin")

    run = sub.add_parser("run", parents=[common], help="simulate, write CSV, print metrics")
    run.add_argument("--dt", type=float)
    run.add_argument("--t-final", type=float)
    run.add_argument("--out", help="CSV output path")
    run.add_argument("--gain", action="append", default=[], metavar="KEY=VALUE",
                     help="controller override such as sub1.cbar1=3 (repeatable)")
    run.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                     help="scenario parameter such as kappa=3 (repeatable)")
    run.add_argument("--memory-truncation", type=int)
    run.add_argument("--log-stride", type=int)
    run.add_argument("--negate-gains", action="store_true", default=None,
                     help="flip the sign of every plant input gain")
    run.add_argument("--theorem1", action="store_true",
                     help="also evaluate the Nussbaum bound on the logged V")

    ver = sub.add_parser("verify", parents=[common], help="check the Nussbaum bound on a run CSV")
    ver.add_argument("csv", help="CSV written by 'run'")
    ver.add_argument("--lam", type=float, default=DEFAULT_LAMBDA, help="decay rate lambda")
    ver.add_argument("--report", help="write t, V, rhs, slack to this CSV")

    chk = sub.add_parser("check", parents=[common], help="assumption and Nussbaum-property checks")
    chk.add_argument("--threshold", type=float, default=10.0)
    chk.add_argument("--search-limit", type=float, default=20.0)
    chk.add_argument("--t-final", type=float, default=20.0)
    chk.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return parser


def _settings(args: argparse.Namespace) -> tuple[dict, dict[str, float], dict[str, float]]:
    sim: dict = {}
    gains: dict[str, float] = {}
    params: dict[str, float] = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        sim, gains, params = split_config(parse_config_text(text, args.config))
    # command-line flags win over the config file
    for flag, key in (("scenario", "scenario"), ("alpha", "alpha"), ("kind", "kind"), ("dt", "dt"),
                      ("t_final", "t_final"), ("out", "out"), ("memory_truncation", "memory_truncation"),
                      ("log_stride", "log_stride"), ("negate_gains", "negate_gains")):
        v = getattr(args, flag, None)
        if v is not None:
            sim[key] = v
    for item in getattr(args, "gain", []):
        k, v = parse_gain(item)
        gains[k] = v
    for item in getattr(args, "param", []):
        k, v = parse_gain(item)
        params[k] = v
    return sim, gains, params


def _kind(sim: dict) -> NussbaumKind:
    return NussbaumKind.parse(sim["kind"]) if "kind" in sim else QUAD_SIN


def cmd_run(args: argparse.Namespace) -> int:
    sim, gains, params = _settings(args)
    scenario = resolve_scenario(sim.get("scenario", "example_a"), params)
    kw = dict(
        scenario=scenario,
        alpha_override=sim.get("alpha"),
        memory_truncation=sim.get("memory_truncation"),
        gain_overrides=gains,
        output_path=sim.get("out"),
        kind=_kind(sim),
        negate_gains=bool(sim.get("negate_gains", False)),
        scenario_params=params,
    )
    for key in ("dt", "t_final", "log_stride", "regressor"):
        if key in sim:
            kw[key] = sim[key]
    config = SimConfig(**kw)
    result = run_closed_loop(config)
    if config.output_path:
        write_csv(result.records, config.output_path, result.orders)
    bound = None
    if args.theorem1 and result.records and not result.diverged and config.log_stride == 1:
        bound = theorem1_check(result.records, result.alpha, result.dt, DEFAULT_LAMBDA, config.kind)
    if result.records:
        report = compute_metrics(result.records, diverged=result.diverged, bound=bound)
        print("\n".join(report.lines()))
    if bound is not None:
        print(f"theorem1_passes {bound.passes()}")
    if result.diverged:
        print(f"diverged: {result.message}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    sim, _, params = _settings(args)
    try:
        records = read_csv(args.csv)
    except OSError as exc:
        raise OSError(f"cannot read {args.csv}: {exc.strerror or exc}") from exc
    if len(records) < 2:
        raise UsageError(f"{args.csv} needs at least two rows")
    dt = records[1].t - records[0].t
    if "alpha" in sim:
        alpha = sim["alpha"]
    else:
        sc = resolve_scenario(sim.get("scenario", "example_a"), params)
        alpha = (SCENARIOS[sc](**params) if isinstance(sc, str) else sc).alpha
    rep = theorem1_check(records, alpha, dt, args.lam, _kind(sim))
    if args.report:
        rep.write_csv(args.report)
    print(f"samples {len(rep.t)}")
    print(f"sigma {rep.sigma:.6g}")
    print(f"min_slack {float(rep.slack.min()):.6g}")
    print(f"max_violation {rep.max_violation:.6g}")
    print(f"passes {rep.passes()}")
    return EXIT_OK if rep.passes() else EXIT_CHECK_FAILED


def cmd_check(args: argparse.Namespace) -> int:
    sim, _, params = _settings(args)
    sc = resolve_scenario(sim.get("scenario", "example_a"), params)
    scenario = SCENARIOS[sc](**params) if isinstance(sc, str) else sc
    a2 = check_assumption2(scenario)
    signs = check_gain_signs(scenario, args.t_final)
    kind = _kind(sim)
    wit = check_nussbaum_property(kind, args.threshold, args.search_limit)
    print(f"assumption2 {a2.passed} max_ratio {a2.max_ratio:.6g}")
    for (i, j), w in sorted(a2.witness.items()):
        print(f"  violation sub{i + 1} row{j + 1} at {list(map(float, w))}")
    print(f"gain_signs {signs}")
    print(f"nussbaum {kind} threshold {args.threshold:g}: sup {wit.sup_witness} inf {wit.inf_witness}")
    ok = a2.passed and signs and wit.found
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_scenarios(args: argparse.Namespace) -> int:
    for name, factory in SCENARIOS.items():
        sc = factory()
        orders = ",".join(str(s.n) for s in sc.subsystems)
        print(f"{name}\talpha={sc.alpha:g}\tsubsystems={sc.n_sub}\torders={orders}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "check": cmd_check, "scenarios": cmd_scenarios}


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FracNussError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
