import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quartic_nls.cli import RunConfig, UsageError, main, parse_config_text
from quartic_nls.dynamics import TrajectoryRecord
from quartic_nls.randomness import sample_data


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_phase_check_box_50(tmp_path, capsys):
    code, out, _ = run(["phase-check", "--box", "50", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "0 mismatches / all tuples" in out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["params"]["box"] == 50 and len(rep["input_hash"]) == 64


def test_sample_writes_pairs(tmp_path, capsys):
    code, _, _ = run(["sample", "--N", "3", "--seed", "5", "--out", str(tmp_path)], capsys)
    assert code == 0
    data = json.loads((tmp_path / "field.json").read_text())
    pairs = np.array(data["coeffs"])
    assert pairs.shape == (7, 2)
    assert np.array_equal(pairs[:, 0] + 1j * pairs[:, 1], sample_data(5, 3).coeffs)
    assert data["config"]["seed"] == 5


def test_evolve_then_gauge(tmp_path, capsys):
    e, g = tmp_path / "e", tmp_path / "g"
    code, _, _ = run(["evolve", "--variant", "renormalized", "--N", "4", "--t", "0.01", "--stride", "20",
                      "--seed", "3", "--out", str(e)], capsys)
    assert code == 0
    rec = TrajectoryRecord.loads((e / "trajectory.csv").read_text())
    assert rec.times[-1] == 0.01 and rec.ensemble is not None
    code, _, _ = run(["gauge", "--input", str(e / "trajectory.csv"), "--kind", "random", "--out", str(g)], capsys)
    assert code == 0
    w = TrajectoryRecord.loads((g / "trajectory.csv").read_text())
    assert np.allclose(np.abs(w.states), np.abs(rec.states), rtol=1e-14)


def test_evolve_halving_failure_exits_2(tmp_path, capsys):
    code, _, err = run(["evolve", "--variant", "renormalized", "--N", "8", "--t", "0.5", "--dt", "5e-4",
                        "--seed", "3", "--out", str(tmp_path)], capsys)
    assert code == 2 and "step-halving" in err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("study.kind = invariance\nstudy.bogus = 1\n")
    code, _, err = run(["study", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "study.bogus" in err


def test_bad_flag_value_exits_2(tmp_path, capsys):
    code, _, _ = run(["study", "--kind", "nope", "--out", str(tmp_path)], capsys)
    assert code == 2
    code, _, _ = run(["evolve", "--N", "x", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_budget_exceeded_exits_2(tmp_path, capsys):
    code, _, err = run(["study", "--kind", "convergence", "--samples", "2", "--out", str(tmp_path)], capsys)
    assert code == 2 and "budget" in err


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("study.kind = functional-tails\nstudy.box = 3\nstudy.samples = 4\nrun.seed = 2\n")
    out = tmp_path / "o"
    code, _, _ = run(["study", "--config", str(cfg), "--samples", "3", "--out", str(out)], capsys)
    assert code in (0, 1)
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["params"]["samples"] == 3 and rep["config"]["seed"] == 2


def test_study_rerun_byte_identical(tmp_path, capsys, monkeypatch):
    argv = ["study", "--kind", "z1-scaling", "--N", "4,8,16", "--samples", "20", "--seed", "7"]
    code1, _, _ = run(argv + ["--out", str(tmp_path / "a")], capsys)
    monkeypatch.setenv("QUARTIC_NLS_THREADS", "2")
    code2, _, _ = run(argv + ["--out", str(tmp_path / "b")], capsys)
    assert code1 == code2
    for name in ("report.json", "cells.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "cells.csv").read_text().splitlines()[0]
    assert "input_hash" in header.split(",")


def test_functional_csv(tmp_path, capsys):
    code, _, _ = run(["functional", "--which", "S2", "--box", "3", "--samples", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = (tmp_path / "functional.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["which", "box"] and "std_error" in header and len(lines) == 2


@given(st.sampled_from(["evolve", "study", "functional"]), st.integers(0, 2**31), st.integers(1, 8))
def test_config_text_roundtrip(command, seed, threads):
    cfg = RunConfig(command, seed=seed, threads=threads, out="somewhere")
    if command == "evolve":
        cfg.update({"evolve.dt": "0.001", "evolve.variant": "gauged", "evolve.t": "0.25"}, origin="test")
    elif command == "study":
        cfg.update({"study.kind": "residual", "study.N": "8,16", "study.t": "0.5,1", "study.control": "true"},
                   origin="test")
    else:
        cfg.update({"functional.which": "S3", "functional.delta": "0.1"}, origin="test")
    back = RunConfig.from_text(command, cfg.to_text())
    assert back == cfg
    assert back.to_text() == cfg.to_text()


def test_config_parser_errors():
    with pytest.raises(UsageError):
        parse_config_text("no equals sign")
    with pytest.raises(UsageError):
        parse_config_text("nosection = 1")
    assert parse_config_text("# comment\n\nrun.seed = 4  # trailing\n") == {"run.seed": "4"}
    with pytest.raises(UsageError):
        RunConfig("evolve").update({"evolve.N": "four"}, origin="test")
