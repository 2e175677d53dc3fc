import io
import json
import subprocess
import sys

import pytest

from membrane_lab.cli import EXIT_CONFIG, EXIT_GATE, EXIT_NUMERIC, EXIT_OK, main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), stdout=out)
    text = out.getvalue()
    report = json.loads(text) if text.strip() else {}
    return code, report


def test_verify_pass():
    code, rep = run("verify", "--entry", "eq37", "--eq", "EQ32")
    assert code == EXIT_OK == 0
    assert rep["command"] == "verify" and rep["exit_code"] == 0
    assert rep["max_residual"] <= 1e-8


def test_verify_role_mismatch():
    code, rep = run("verify", "--entry", "eq8-hyperboloid", "--eq", "EQ31")
    assert code == EXIT_CONFIG == 2
    assert "error" in rep


def test_verify_degenerate_graph():
    code, rep = run("verify", "--entry", "graph-null", "--eq", "EQ70")
    assert code == 0 and rep["degenerate"] is True


def test_verify_gate_failure(tmp_path):
    from membrane_lab.grid import Field2, Grid2
    g = Grid2.make(("tau", "mu"), (1, 2, 17), (1, 2, 17))
    T, M = g.mesh()
    path = tmp_path / "bad.csv"
    path.write_text(Field2(g, M / T + T * M).to_csv())
    code, rep = run("verify", "--file", str(path), "--eq", "EQ3")
    assert code == EXIT_GATE == 1 and rep["passed"] is False


def test_verify_fd_ladder_and_csv(tmp_path):
    out = tmp_path / "res.csv"
    code, rep = run("verify", "--entry", "eq7-sqrt", "--eq", "EQ3", "--method", "fd", "--ladder",
                    "--grid", "tau:1:2:33,mu:1:2:33", "--out", str(out))
    assert code == 0
    assert all(3.2 <= r <= 4.8 for r in rep["ladder"]["ratios"])
    lines = out.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["tau", "mu"] and len(lines) == 33 * 33 + 1


def test_verify_params_and_json_file(tmp_path):
    path = tmp_path / "r.json"
    code, rep = run("verify", "--entry", "eq1-levelset", "--param", "C=1/2", "--eq", "EQ33", "--json", str(path))
    assert code == 0
    assert json.loads(path.read_text()) == rep


def test_verify_needs_one_source():
    code, _ = run("verify", "--eq", "EQ3")
    assert code == 2
    code, _ = run("verify", "--entry", "eq37", "--file", "x.csv", "--eq", "EQ32")
    assert code == 2


def test_unknown_entry_and_bad_grid():
    assert run("verify", "--entry", "nope", "--eq", "EQ3")[0] == 2
    assert run("verify", "--entry", "eq37", "--eq", "EQ32", "--grid", "tau:1:2")[0] == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"entry": "eq37", "eq": "EQ32", "tol": 1e-9}))
    code, rep = run("verify", "--config", str(cfg))
    assert code == 0
    cfg.write_text(json.dumps({"entry": "eq37", "eq": "EQ32", "colour": "red"}))
    code, rep = run("verify", "--config", str(cfg))
    assert code == 2 and "colour" in rep["error"]


def test_explicit_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"entry": "eq37", "eq": "EQ33"}))
    assert run("verify", "--config", str(cfg))[0] == 2
    assert run("verify", "--config", str(cfg), "--eq", "EQ32")[0] == 0


def test_argparse_errors_exit_2():
    assert run("verify", "--bogus")[0] == 2
    assert run()[0] == 2


def test_transform_hyperboloid():
    code, rep = run("transform", "--entry", "eq8-hyperboloid")
    assert code == 0
    assert rep["newton_failures"] == 0 and rep["jacobian_defect"] <= 1e-6
    assert rep["residual_of_Rstar"]["passed"]


def test_transform_fit():
    code, rep = run("transform", "--entry", "eq7-sqrt", "--param", "epsilon=1e-3", "--fit")
    assert code == 0
    fit = rep["fit"]
    assert round(fit["alpha"]) == 7 and round(fit["beta"]) == -5
    assert fit["delta"] == pytest.approx(-1e-3 / 6, rel=0.05)


def test_transform_null_region():
    code, rep = run("transform", "--entry", "eq7-drop", "--param", "epsilon=1",
                    "--grid", "tau:1:2:33,mu:0.05:1:33")
    assert code == EXIT_NUMERIC == 3


def test_transform_wrong_role():
    assert run("transform", "--entry", "eq37")[0] == 2


def test_series_singular():
    code, rep = run("series", "--alpha", "-1", "--beta", "-1", "--delta", "1/2")
    assert code == 0
    # delta = eps/2 with eps = 1
    assert (rep["star"]["alpha"], rep["star"]["beta"], rep["star"]["delta"]) == ("7", "-5", "-1/6")
    assert rep["star"]["tau1"] == "-1" and rep["star"]["mu1"] == "-5/3"
    assert rep["double_star"]["delta"] == "1/2"
    assert rep["level_set"]["coefficient"] == "4/3"


def test_series_regular():
    code, rep = run("series", "--alpha", "2", "--beta", "0", "--delta", "1")
    assert code == 0
    assert (rep["star"]["alpha"], rep["star"]["beta"], rep["star"]["delta"]) == ("-6", "4", "3")
    assert rep["double_star_ratio"] == "1"


def test_series_invalid():
    assert run("series", "--alpha", "1", "--beta", "1")[0] == 2
    assert run("series", "--alpha", "x", "--beta", "1")[0] == 2


def test_evolve():
    code, rep = run("evolve", "--entry", "eq7-drop", "--param", "epsilon=0.1", "--grid", "mu:1:2:257",
                    "--tau", "1:1.5")
    assert code == 0 and rep["final_error"] <= 1e-6


def test_evolve_config_file(tmp_path):
    path = tmp_path / "ev.json"
    path.write_text(json.dumps({"n": 65, "tau1": 1.2}))
    code, rep = run("evolve", "--entry", "eq7-sqrt", "--evolution", str(path))
    assert code == 0 and rep["config"]["n"] == 65
    path.write_text(json.dumps({"n": 65, "cfl": 1}))
    assert run("evolve", "--entry", "eq7-sqrt", "--evolution", str(path))[0] == 2


def test_evolve_instability_exit_3():
    assert run("evolve", "--entry", "eq7-drop", "--grid", "mu:1:2:65", "--step", "0.5")[0] == 3


def test_evolve_gate_and_role():
    assert run("evolve", "--entry", "eq7-sqrt", "--grid", "mu:1:2:65", "--boundary", "extrapolating")[0] == 1
    assert run("evolve", "--entry", "eq37")[0] == 2
    assert run("evolve", "--entry", "eq7-drop", "--grid", "tau:1:2:9,mu:1:2:9")[0] == 2


def test_evolve_csv(tmp_path):
    out = tmp_path / "field.csv"
    code, _ = run("evolve", "--entry", "eq7-drop", "--grid", "mu:1:2:17", "--out", str(out))
    assert code == 0
    assert out.read_text().splitlines()[0].startswith("tau,mu")


def test_reduce_ansatz():
    code, rep = run("reduce", "--ansatz", "minus")
    assert code == 0
    assert {f["a"] for f in rep["families"]} == {"1/2", "3"}
    code, rep = run("reduce", "--ansatz", "minus", "--conditions", "derived")
    assert {f["a"] for f in rep["families"]} == {"0", "1/2", "3"}


def test_reduce_profiles():
    code, rep = run("reduce", "--family", "T", "--param", "A=-3", "--param", "B=1",
                    "--profile", "c/2 - q**2/2", "--profile-param", "c=1", "--grid", "q:0.5:2:33")
    assert code == 0
    assert run("reduce", "--family", "graph", "--entry", "eq66-graph")[0] == 0
    assert run("reduce", "--family", "T", "--param", "A=1", "--param", "B=1", "--profile", "q",
               "--grid", "q:0.5:2:9")[0] == 2
    assert run("reduce", "--family", "H", "--param", "a=2", "--param", "b=-1", "--profile", "1 + z",
               "--grid", "z:0.1:1:9")[0] == 1


def test_list():
    code, rep = run("list")
    assert code == 0
    names = {e["name"] for e in rep["entries"]}
    assert {"eq7-sqrt", "eq8-hyperboloid", "eq60-orthonormal"} <= names


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "membrane_lab.cli", "series", "--alpha", "2", "--beta", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["star"]["alpha"] == "-6"
