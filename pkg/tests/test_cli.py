from __future__ import annotations

import json
import subprocess
import sys

import pytest

from relaynet.channel import PathLoss
from relaynet.cli import HEADER, ResultRow, emit_csv, format_csv, main, read_csv, run_experiment
from relaynet.config import (DEFAULT_RATE_GRID, ExperimentConfig, ParseError, StrategySpec, ValidationError,
                             parse_config, serialize)

TINY = {"n_outer": 100, "n_inner": 100, "compression_grid": [1.0, 2.0], "rho_grid": [0.0]}


def tiny(**overrides) -> str:
    return json.dumps({**TINY, **overrides})


def test_empty_config_is_two_relay_default():
    cfg = parse_config("{}")
    assert cfg == ExperimentConfig()
    assert (cfg.source_power, cfg.relay_powers, cfg.noise_variances) == (1.0, (10.0, 10.0), (1.0, 1.0, 1.0))
    assert cfg.path_loss == PathLoss(0.0, 0.1, 1.0) and cfg.rate_grid == DEFAULT_RATE_GRID
    assert [s.label for s in cfg.strategies] == ["FullDF", "FullCF", "Mixed(df=1)", "SCS(EmpiricalArgmin)",
                                                 "CutsetLB"]
    topo = cfg.topology()
    assert topo.links[(0, 1)].path_loss == PathLoss(0.0, 0.1, 1.0)


@pytest.mark.parametrize("text, field", [
    ('{"source_power": -1}', "source_power"),
    ('{"relay_powers": [1.0]}', "relay_powers"),
    ('{"rate_grid": [1.0, 0.5]}', "rate_grid"),
    ('{"rate_grid": []}', "rate_grid"),
    ('{"n_outer": 99}', "n_outer"),
    ('{"n_inner": 50}', "n_inner"),
    ('{"seed": -1}', "seed"),
    ('{"rho_grid": [1.0]}', "rho_grid"),
    ('{"strategies": [{"kind": "SCS", "rule": "Oracle"}]}', "strategies[0].rule"),
    ('{"strategies": [{"kind": "Mixed", "df": [3]}]}', "strategies[0].df"),
    ('{"strategies": ["FullCF", "FullCF"]}', "strategies"),
    ('{"path_loss": {"lo": 0.2, "hi": 0.1}}', "path_loss"),
])
def test_validation_names_the_field(text, field):
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert info.value.field == field


def test_parse_errors():
    with pytest.raises(ParseError) as info:
        parse_config('{"seed": 1,\n "colour": 2}')
    assert info.value.field == "colour"
    with pytest.raises(ParseError) as info:
        parse_config('{\n"seed": }')
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_config("[1, 2]")


def test_strategy_forms():
    cfg = parse_config(json.dumps({"strategies": ["FullDF", {"kind": "Mixed", "df": [2]},
                                                  {"kind": "SCS", "rule": "FixedV", "cf": [2, 1]},
                                                  {"kind": "SCS", "rule": "FeasibilityHeuristic"}]}))
    assert [s.label for s in cfg.strategies] == ["FullDF", "Mixed(df=2)", "SCS(FixedV=cf{1+2})",
                                                 "SCS(FeasibilityHeuristic)"]
    assert cfg.strategies[1].resolve(2, 500).v.cf == (1,)


@pytest.mark.parametrize("text", ["{}", tiny(seed=2 ** 64 - 1, path_loss=None, fast=True),
                                  tiny(strategies=[{"kind": "SCS", "rule": "FixedV", "cf": [1]}])])
def test_serialize_round_trip(text):
    once = serialize(parse_config(text))
    assert serialize(parse_config(once)) == once
    assert parse_config(once) == parse_config(text)


def _row(strategy="FullCF", r=1.0, eps=0.25):
    return ResultRow(strategy, r, eps, eps / 2, min(1.0, eps * 2), 2000, 500, 0.0)


def test_csv_shapes(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv([], path)
    assert path.read_bytes() == (",".join(HEADER) + "\n").encode()
    emit_csv([_row()], path)
    data = path.read_bytes()
    assert data.count(b"\n") == 2 and b"\r" not in data


def test_csv_round_trip_and_order(tmp_path):
    rows = [_row("SCS(EmpiricalArgmin)", 2.0, 1 / 3), _row("FullCF", 0.5, 2 / 7), _row("FullCF", 0.25, 0.1)]
    path = tmp_path / "out.csv"
    emit_csv(rows, path)
    back = read_csv(path)
    assert back == sorted(rows, key=lambda row: (row.strategy, row.r))
    assert back[0].epsilon_hat == 0.1 and str(back[2].epsilon_hat) == "0.333333333"


def test_row_invariants():
    with pytest.raises(ValueError):
        ResultRow("FullCF", 1.0, 0.5, 0.6, 0.7, 100, 100)
    with pytest.raises(ValueError):
        ResultRow("a,b", 1.0, 0.5, 0.4, 0.7, 100, 100)


def test_zero_rate_never_outage():
    rows = run_experiment(parse_config(tiny(rate_grid=[0.0])))
    assert len(rows) == 5 and all(r.epsilon_hat == 0.0 for r in rows)


def test_cutset_row_below_full_cf():
    rows = run_experiment(parse_config(tiny(rate_grid=[1.0, 2.0, 3.0], strategies=["FullCF", "CutsetLB"])))
    by = {(r.strategy, r.r): r for r in rows}
    for r in (1.0, 2.0, 3.0):
        lb, cf = by[("CutsetLB", r)], by[("FullCF", r)]
        assert lb.epsilon_hat <= cf.epsilon_hat + (cf.ci_hi - cf.ci_lo)
        assert cf.n_inner == 100 and lb.n_inner == 0


def test_main_writes_csv_and_is_deterministic(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(tiny(rate_grid=[1.0, 2.0], strategies=["FullCF", "CutsetLB"]))
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(["--config", str(cfg), "--output", str(a)]) == 0
    monkeypatch.setenv("RELAYNET_THREADS", "2")
    assert main(["--config", str(cfg), "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["--config", str(cfg), "--output", str(c), "--seed", "5"]) == 0
    assert a.read_bytes() != c.read_bytes()
    assert [r.strategy for r in read_csv(a)] == ["CutsetLB", "CutsetLB", "FullCF", "FullCF"]


def test_main_reports_errors(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{"source_power": 0}')
    assert main(["--config", str(bad)]) == 2
    assert "source_power" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.json")]) == 2
    assert main(["--threads", "0"]) == 2
    monkeypatch.setenv("RELAYNET_THREADS", "many")
    assert main(["--config", str(bad)]) == 2


def test_record_timing_fills_wall_time():
    rows = run_experiment(parse_config(tiny(rate_grid=[1.0], strategies=["FullCF"], record_timing=True)))
    assert rows[0].wall_time_ms > 0


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(tiny(rate_grid=[1.0], strategies=["CutsetLB"]))
    out = subprocess.run([sys.executable, "-m", "relaynet", "--config", str(cfg), "--fast"],
                         capture_output=True, text=True, check=True)
    lines = out.stdout.splitlines()
    assert lines[0] == ",".join(HEADER) and lines[1].startswith("CutsetLB,1,")
    assert len(format_csv([_row()]).splitlines()) == 2
    assert StrategySpec("CutsetLB").to_json() == {"kind": "CutsetLB"}
