import csv
import json
import math
import subprocess
import sys

import pytest

from tic import ConfigError
from tic.cli import main
from tic.config import parse_config

MV = {
    "horizon": 1.0,
    "coefficients": {"A": 0.05, "B": 0.4, "D": 0.2},
    "objective": {"kind": "mean-variance", "weights": {"gamma": 2.0}},
}
SMALL = {
    **MV,
    "grids": {"time_steps": 20},
    "verify": {"t_points": [0.0, 0.5], "x_points": 3, "alpha_values": [0.0], "beta_points": 5},
    "simulation": {"paths": 2000, "step": 1 / 256, "deviation": {"beta": 6.0}, "epsilon": 0.05},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_minimal_config_gets_defaults():
    cfg = parse_config(json.dumps(MV))
    assert cfg.data["grids"]["time_steps"] == 199
    assert cfg.time_grid.size == 200
    assert cfg.data["verify"]["epsilon_ladder"] == [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    assert cfg.data["coefficients"]["C"] == 0.0


def test_config_echo_round_trips():
    cfg = parse_config(json.dumps(SMALL))
    again = parse_config(cfg.to_json())
    assert again.data == cfg.data


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"horizon": -1}, "horizon"),
        ({"objective": {"kind": "mvsk", "weights": {"gamma2": 1, "gamma3": 0, "gamma4": 0, "gamma5": 1}}}, "gamma5"),
        ({"grids": {"time_stepz": 3}}, "grids.time_stepz"),
        ({"coefficients": {"A": [[0, 1], [2, 1]]}}, "coefficients"),
        ({"verify": {"t_points": [0.995]}}, "verify.t_points"),
        ({"objective": {"kind": "mean-variance", "weights": {"gamma": 1}, "max_moment": 9}}, "objective.max_moment"),
    ],
)
def test_config_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps({**MV, **patch}))
    assert field in str(info.value)


def test_non_finite_numbers_rejected():
    with pytest.raises(ConfigError):
        parse_config('{"horizon": NaN, "objective": {"kind": "mean-variance", "weights": {"gamma": 1}}}')


def test_solve_writes_closed_form(tmp_path):
    assert main(["solve", "--config", str(_write(tmp_path, MV)), "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "equilibrium.csv")
    assert len(rows) == 200
    for row in rows:
        t = float(row["t"])
        assert abs(float(row["beta"]) - 5 * math.exp(-0.05 * (1 - t))) < 1e-6
        assert abs(float(row["alpha"])) < 1e-8


def test_sweep_summary(tmp_path):
    cfg = {**SMALL, "verify": {**SMALL["verify"], "alpha_values": [0.0]}}
    assert main(["sweep", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["verdict"] == "strong-candidate"
    assert summary["witness_count"] == 0
    assert summary["config"]["grids"]["time_steps"] == 20
    rows = _read_csv(tmp_path / "o" / "verification.csv")
    assert len(rows) == 2 * 3 * 4
    assert {r["class"] for r in rows} == {"worse-first-order"}


@pytest.mark.parametrize("sub", ["moments", "solve", "verify", "sweep", "simulate"])
def test_reruns_are_byte_identical(tmp_path, sub):
    path = _write(tmp_path, SMALL)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([sub, "--config", str(path), "--out", str(out), "--seed", "42"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1] and outs[0]


def test_simulate_table(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(_write(tmp_path, SMALL)), "--out", str(out)]) == 0
    rows = {r["quantity"]: r for r in _read_csv(out / "simulation.csv")}
    assert set(rows) == {"mean", "C2", "spike_gain"}
    for r in rows.values():
        assert abs(float(r["z"])) < 4.5


def test_seed_changes_simulation(tmp_path):
    path = _write(tmp_path, SMALL)
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "simulation.csv").read_bytes() != (tmp_path / "b" / "simulation.csv").read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(_write(tmp_path, {**MV, "horizon": -1})), "--out", str(out)]) == 1
    assert "horizon" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 1


def test_numerical_failure_exit_code_leaves_no_files(tmp_path, capsys):
    cfg = {**MV, "grids": {"time_steps": 2}, "solver": {"max_corrector": 1, "corrector_tol": 1e-300}}
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 2
    assert "corrector" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_zero_diffusion_is_a_config_error(tmp_path):
    cfg = {**MV, "coefficients": {"B": 1.0}}
    assert main(["solve", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 1


def test_console_entry_point(tmp_path):
    path = _write(tmp_path, {**MV, "grids": {"time_steps": 4}})
    proc = subprocess.run(
        [sys.executable, "-m", "tic.cli", "moments", "--config", str(path), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    header = (tmp_path / "o" / "moments.csv").read_text().splitlines()[0]
    assert header == "t,x,mean,C2"
