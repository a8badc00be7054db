from __future__ import annotations

import textwrap

import pytest

from fracnuss.cli import (
    EXIT_CHECK_FAILED,
    EXIT_DIVERGED,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    UsageError,
    cli_main,
    parse_config_text,
    split_config,
)

ESCAPING_SCENARIO = textwrap.dedent('''
    import numpy as np
    from fracnuss.plant import ZERO_REFERENCE, Scenario, SubsystemSpec

    def build_scenario():
        spec = SubsystemSpec(
            n=1, gains=(lambda t: 1.0,), phis=(lambda x: 10.0 * x[0] ** 2,),
            interactions=(lambda y, xs: 0.0,), disturbance=lambda t: 0.0,
            psi_bounds=((None,),), beta=np.zeros((1, 1)), dist_bound=0.0,
            gain_bounds=((1.0, 1.0),), x0=np.array([2.0]))
        return Scenario("escape", 0.8, (spec,), (ZERO_REFERENCE,), design={"sub1.delta1": 0.0})
''')


def test_scenarios_lists_builtins(capsys):
    assert cli_main(["scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "example_a" in out and "pmsm" in out


@pytest.mark.parametrize("argv", [[], ["run", "--dt", "-1"], ["run", "--bogus"], ["fly"],
                                  ["run", "--gain", "nonsense"], ["run", "--scenario", "tokamak"],
                                  ["run", "--gain", "sub1.cbar9=2", "--t-final", "0.1"]])
def test_usage_errors(argv, capsys):
    assert cli_main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_run_writes_csv_and_metrics(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code = cli_main(["run", "--scenario", "pmsm", "--t-final", "0.5", "--out", str(out)])
    assert code == EXIT_OK
    assert out.exists()
    lines = out.read_text().splitlines()
    assert lines[0].startswith("t,y1,yr1,z1_1")
    assert len(lines) == 502
    stdout = capsys.readouterr().out
    assert "sup_error_tail1" in stdout and "diverged False" in stdout


def test_run_then_verify(tmp_path, capsys):
    out = tmp_path / "run.csv"
    report = tmp_path / "bound.csv"
    assert cli_main(["run", "--scenario", "pmsm", "--t-final", "1", "--out", str(out)]) == EXIT_OK
    assert cli_main(["verify", str(out), "--scenario", "pmsm", "--report", str(report)]) == EXIT_OK
    assert "passes True" in capsys.readouterr().out
    assert report.read_text().startswith("t,V,rhs,slack")


def test_run_io_error(tmp_path):
    bad = tmp_path / "no" / "such" / "dir.csv"
    assert cli_main(["run", "--scenario", "pmsm", "--t-final", "0.1", "--out", str(bad)]) == EXIT_IO


def test_verify_missing_file(tmp_path):
    assert cli_main(["verify", str(tmp_path / "absent.csv")]) == EXIT_IO


def test_diverged_run_exit_code(tmp_path, capsys):
    path = tmp_path / "escape.py"
    path.write_text(ESCAPING_SCENARIO)
    assert cli_main(["run", "--scenario", str(path), "--t-final", "5"]) == EXIT_DIVERGED
    captured = capsys.readouterr()
    assert "diverged True" in captured.out
    assert "diverged:" in captured.err


def test_check_builtin_and_failure(tmp_path, capsys):
    assert cli_main(["check", "--scenario", "example_a"]) == EXIT_OK
    assert "assumption2 True" in capsys.readouterr().out
    # a threshold out of reach within the search interval
    assert cli_main(["check", "--scenario", "pmsm", "--threshold", "1e9"]) == EXIT_CHECK_FAILED


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    out = tmp_path / "cfg.csv"
    cfg.write_text(textwrap.dedent(f"""
        # comment line
        scenario = pmsm
        sim.dt = 0.002
        t_final = 5
        out = {out}
        gains.sub2.cbar1 = 4   # trailing comment
        scenario.kappa = 3
    """))
    assert cli_main(["run", "--config", str(cfg), "--t-final", "0.2"]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 102


def test_config_parsing():
    entries = parse_config_text("a = 1\n\n# x\nsim.dt=0.5\ngains.all.rho = 0.2\nscenario.nu = 4\n")
    sim, gains, params = split_config({k: v for k, v in entries.items() if k != "a"})
    assert sim == {"dt": 0.5}
    assert gains == {"all.rho": 0.2}
    assert params == {"nu": 4.0}
    with pytest.raises(UsageError):
        parse_config_text("just words")
    with pytest.raises(UsageError):
        split_config({"colour": "blue"})
    with pytest.raises(UsageError):
        split_config({"gains.sub1.cbar1": "three"})


def test_missing_config_is_io_error(tmp_path):
    assert cli_main(["run", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO
