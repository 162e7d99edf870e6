import json
import math

import numpy as np
import pytest

from ionsim.cli import (INVALID_POINT, NOT_CONVERGED, Column, ExperimentConfig, ResultTable,
                        emit, main, parse_csv, parse_json, parse_grid, plan, run)
from ionsim.errors import ConfigError


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def cfg(kind, **params):
    return ExperimentConfig.from_dict({"kind": kind, "parameters": params})


def test_grid_forms():
    assert parse_grid(2.5, "x").tolist() == [2.5]
    assert parse_grid([1, 2], "x").tolist() == [1.0, 2.0]
    np.testing.assert_allclose(parse_grid({"start": 1, "stop": 100, "points": 3, "scale": "log"},
                                          "x"), [1, 10, 100])
    assert parse_grid({"start": 0, "stop": 1, "points": 1}, "x").tolist() == [0.0]


@pytest.mark.parametrize("bad, field", [
    ({"start": 1, "stop": 2}, "x.points"),
    ({"start": 1, "stop": 2, "points": 0}, "x.points"),
    ({"start": 0, "stop": 2, "points": 3, "scale": "log"}, "x"),
    ({"start": 1, "stop": 2, "points": 3, "scale": "cubic"}, "x.scale"),
    ([], "x"),
    ("abc", "x"),
])
def test_grid_errors(bad, field):
    with pytest.raises(ConfigError) as e:
        parse_grid(bad, "x")
    assert e.value.field == field


@pytest.mark.parametrize("data, field", [
    ({"kind": "frobnicate"}, "kind"),
    ({"kind": "eta_limit", "parameters": {"gamma": -1}}, "parameters.gamma"),
    ({"kind": "eta_limit", "parameters": {"gamma": 0.1, "colour": 1}}, "parameters.colour"),
    ({"kind": "eta_limit", "parameters": {"gamma": 0.1}, "output": {"format": "xml"}},
     "output.format"),
    ({"kind": "cool_single", "parameters": {"gamma": 0.1}}, "parameters.eta2"),
    ({"kind": "cool_double", "parameters": {"eta2": 1, "gamma": 0.1, "m": 1.5}},
     "parameters.m"),
    ({"kind": "shelve_sweep", "parameters": {"B": 0.01}}, "parameters.rabi_over_gamma"),
    ({"kind": "shelve_sweep", "parameters": {"B": -0.01, "rabi_over_gamma": 1}}, "parameters.B"),
])
def test_validation_names_field(data, field):
    with pytest.raises(ConfigError) as e:
        plan(ExperimentConfig.from_dict(data))
    assert e.value.field == field


def test_matrix_table_identity():
    t = run(cfg("matrix_table", eta=0.0, f_max=5, n_max=5), threads=1)
    f, n, s = t.column("f"), t.column("n"), t.column("strength")
    assert len(t.rows) == 36
    assert np.array_equal(s, (f == n).astype(float))


def test_empty_table_emits_header_only():
    t = ResultTable([Column("x", "T"), Column("y")], [], {"version": "0"})
    text = emit(t, "csv")
    assert text.splitlines() == ["# version=0", "x [T],y [1]"]
    assert json.loads(emit(t, "json"))["rows"] == []


def test_round_trip():
    vals = [[math.pi, 1e-300, -2.5e17, 7.0], [math.e, 0.1, math.nan, 3.0]]
    t = ResultTable([Column("a", "s"), Column("b"), Column("c", "rad/s"), Column("status")],
                    vals, {"config": {"kind": "x", "list": [1, 2]}, "version": "0.1.0"})
    back = parse_json(emit(t, "json"))
    assert back.columns == t.columns and back.provenance == t.provenance
    np.testing.assert_array_equal(np.array(back.rows), np.array(vals))
    back = parse_csv(emit(t, "csv"))
    assert back.columns == t.columns and back.provenance == t.provenance
    np.testing.assert_allclose(np.array(back.rows), np.array(vals), rtol=5e-12)


def test_csv_quoting():
    t = ResultTable([Column("a,b", "1")], [[1.0]], {"note": "x"})
    assert '"a,b [1]"' in emit(t, "csv")


def test_thread_count_does_not_change_output():
    c = cfg("cool_double", eta2={"start": 0.0, "stop": 2.0, "points": 6}, gamma=0.1, m=[2, 3],
            n_max=40)
    a, b = emit(run(c, threads=1), "csv"), emit(run(c, threads=3), "csv")
    assert a == b


def test_zero_eta_row_is_flagged_not_dropped():
    t = run(cfg("cool_double", eta2=[0.0, 1.0], gamma=0.1, m=3, n_max=60), threads=1)
    assert len(t.rows) == 2
    assert t.column("status").tolist() == [INVALID_POINT, 0]
    assert math.isnan(t.column("P0")[0])
    assert t.failed == 0


def test_cli_validate_and_run(tmp_path, capsys):
    good = write(tmp_path, {"kind": "readout_stats",
                            "parameters": {"epsilon": 0.9, "n_ions": 44, "r": [1, 2]}})
    assert main(["validate", str(good)]) == 0
    out = tmp_path / "o.csv"
    assert main(["run", str(good), "--out", str(out)]) == 0
    first = out.read_bytes()
    assert main(["run", str(good), "--out", str(out), "--threads", "2"]) == 0
    assert out.read_bytes() == first
    t = parse_csv(first.decode())
    assert t.column("success")[0] == pytest.approx(0.9 ** 44, rel=1e-11)


def test_cli_json_output(tmp_path):
    c = write(tmp_path, {"kind": "eta_limit", "parameters": {"gamma": [0.05, 0.1]},
                         "output": {"format": "json", "path": str(tmp_path / "r.json")}})
    assert main(["run", str(c)]) == 0
    t = parse_json((tmp_path / "r.json").read_text())
    assert t.provenance["config"]["kind"] == "eta_limit"
    assert 2.7 < t.column("eta_max")[1] < 3.3


def test_cli_exit_code_on_invalid(tmp_path, capsys):
    bad = write(tmp_path, {"kind": "eta_limit", "parameters": {"gamma": "wide"}})
    assert main(["validate", str(bad)]) == 1
    assert "parameters.gamma" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["run", str(broken)]) == 1


def test_cli_exit_code_on_solver_failure(tmp_path):
    # an intermediate-state cutoff far too small for eta^2 = 3
    c = write(tmp_path, {"kind": "cool_double",
                         "parameters": {"eta2": [0.5, 3.0], "gamma": 0.1, "m": 3, "n_max": 100,
                                        "j_max": 101}})
    out = tmp_path / "o.csv"
    assert main(["run", str(c), "--out", str(out), "--threads", "1"]) == 2
    t = parse_csv(out.read_text())
    assert len(t.rows) == 2
    assert t.column("status")[1] == NOT_CONVERGED


def test_provenance_reproduces_run(tmp_path):
    c = cfg("detect_sweep", B=[1e-4, 1e-3], rabi_over_gamma=10)
    t = run(c, threads=1)
    again = run(ExperimentConfig.from_dict(t.provenance["config"]), threads=1)
    assert emit(again, "csv") == emit(t, "csv")
