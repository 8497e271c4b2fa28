import subprocess
import sys
from dataclasses import replace

import pytest

from mesmpc.cli import TRACE_HEADER, main
from mesmpc.config import (
    ConfigError,
    RunConfig,
    load_scenario,
    parse_scenario,
    resolve,
    scenario_to_ini,
    validate_scenario,
)
from mesmpc.servo import get_scenario


def summary(path):
    out = {}
    for line in (path / "summary.txt").read_text().splitlines():
        k, v = line.split(": ", 1)
        out[k] = v
    return out


def test_nominal_run_has_no_torque_violations(tmp_path, capsys):
    assert main(["run", "--scenario", "nominal", "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert s["torque_bound_violations"] == "0"
    assert s["input_bound_violations"] == "0"
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.split(",") == TRACE_HEADER
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 1501
    assert "torque_bound_violations: 0" in capsys.readouterr().out


def test_mismatched_model_violates_torque_limit(tmp_path):
    assert main(["run", "--scenario", "single", "--no-learning", "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert int(s["torque_bound_violations"]) >= 1
    assert s["learning"] == "off"


def test_learning_rows_match_termination(tmp_path):
    args = ["run", "--scenario", "double", "--n-e", "40", "--max-iterations", "3",
            "--q-nominal", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    s = summary(tmp_path)
    rows = (tmp_path / "learning.csv").read_text().splitlines()
    assert rows[0] == "iter,Q,delta_beta_l,delta_J_l"
    assert len(rows) - 1 == int(s["termination_iteration"]) == 3
    assert s["terminated_by_threshold"] == "false"


def test_runs_are_byte_identical(tmp_path):
    args = ["run", "--scenario", "single", "--n-e", "40", "--max-iterations", "3", "--q-nominal", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in ("trace.csv", "learning.csv", "summary.txt", "scenario.ini"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_validate_ok(capsys):
    assert main(["validate", "--scenario", "double"]) == 0
    out = capsys.readouterr().out
    assert "resolved N_E=942" in out
    assert out.rstrip().endswith("OK")


def test_validate_rejects_shared_frequency(capsys):
    code = main(["validate", "--scenario", "double", "--dither", "J_l:1e-8:0.7"])
    assert code == 1
    assert "error [mes]" in capsys.readouterr().err


def test_validate_rejects_bad_horizon(tmp_path, capsys):
    f = tmp_path / "bad.ini"
    f.write_text("[scenario]\nbase = single\n\n[mpc]\nN = 3\n")
    assert main(["validate", "--scenario", str(f)]) == 1
    assert "N_u must satisfy" in capsys.readouterr().err
    assert main(["run", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_unknown_scenario(capsys):
    assert main(["validate", "--scenario", "nope"]) == 1
    assert "error [cli]" in capsys.readouterr().err


def test_bad_dither_syntax():
    with pytest.raises(SystemExit) as exc:
        main(["validate", "--scenario", "single", "--dither", "beta_l:1"])
    assert exc.value.code == 2


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    assert "single: learning=on" in out and "nominal: learning=off" in out


@pytest.mark.parametrize("name", ["nominal", "single", "double"])
def test_scenario_file_round_trip(name):
    s = get_scenario(name)
    # the file records the resolved window length
    assert parse_scenario(scenario_to_ini(s)) == replace(s, N_E=s.n_e)


def test_overrides_and_validation():
    s = resolve(RunConfig("single", overrides={"g": 5.0, "rho": 1e4}))
    assert s.true_params.g == s.assumed_params.g == 5.0
    assert s.tuning.rho == 1e4
    with pytest.raises(ConfigError) as err:
        resolve(RunConfig("single", overrides={"max_iterations": 0}))
    assert err.value.problems[0][0] == "learner"
    assert validate_scenario(load_scenario("double")) == []


def test_plot_script_compiles(tmp_path):
    assert main(["run", "--scenario", "nominal", "--steps", "50", "--out", str(tmp_path)]) == 0
    compile((tmp_path / "plot_figures.py").read_text(), "plot_figures.py", "exec")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mesmpc", "scenarios"], capture_output=True, text=True)
    assert out.returncode == 0 and "double" in out.stdout
