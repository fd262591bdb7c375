import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nodal_bubbles import cli
from nodal_bubbles import profiles as pr


def run(argv, capsys):
    code = cli.dispatch(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def solution_file(tmp_path_factory, ding_23_one_node):
    path = tmp_path_factory.mktemp("sol") / "sol.json"
    path.write_text(json.dumps(ding_23_one_node.to_document()))
    return str(path)


def test_mass3d_example(capsys):
    code, out, _ = run(["mass3d", "--h0", "0.75"], capsys)
    assert code == 0
    assert abs(json.loads(out)["mass"]) <= 1e-10


def test_mass3d_both(capsys):
    code, out, _ = run(["mass3d", "--h0", "0.5", "--method", "both"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["route_difference"] < 1e-8


def test_mass3d_noncoercive_is_usage_error(capsys):
    code, _, err = run(["mass3d", "--h0", "-1"], capsys)
    assert code == 2 and "coercive" in err


def test_mass_sweep_csv(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, _, _ = run(["mass3d", "--sweep", "0.1:2.0:20", "--format", "csv", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["h0", "mass"] and len(rows) == 21
    masses = [float(r[1]) for r in rows[1:]]
    h0 = [float(r[0]) for r in rows[1:]]
    i = next(k for k in range(19) if masses[k] * masses[k + 1] < 0)
    assert h0[i] < 0.75 < h0[i + 1]


def test_certify_example(capsys):
    code, out, _ = run(["certify", "--dim", "5", "--t", "1.05"], capsys)
    assert code == 0 and json.loads(out)["verdict"] == "CERTIFIED_NO_BLOWUP"


def test_certify_bad_t(capsys):
    code, _, err = run(["certify", "--dim", "5", "--t", "1.2"], capsys)
    assert code == 2 and "interval" in err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.dispatch(["mass3d", "--bogus"])
    assert exc.value.code == 2


def test_weyl_product_from_file(solution_file, capsys):
    code, out, _ = run(["weyl-product", "--solution", solution_file, "--tensor", "product:2x3"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["value"] < 0 and doc["agreement_report"]["all_ok"]


def test_weyl_product_montecarlo_needs_seed(solution_file, capsys):
    code, _, err = run(["weyl-product", "--solution", solution_file, "--tensor", "product:2x3",
                        "--method", "montecarlo"], capsys)
    assert code == 2 and "seed" in err


def test_weyl_product_dimension_mismatch(capsys):
    code, _, _ = run(["weyl-product", "--solution", "standard:6", "--tensor", "product:2x3"], capsys)
    assert code == 2


def test_malformed_profile_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "kind": "numeric-biradial", "n": 5}))
    code, _, err = run(["pohozaev", "--profile", str(bad)], capsys)
    assert code == 2
    bad.write_text("{not json")
    code, _, _ = run(["pohozaev", "--profile", str(bad)], capsys)
    assert code == 2


def test_pohozaev_standard(capsys):
    code, out, _ = run(["pohozaev", "--profile", "standard:3", "--delta", "0.5", "1", "2"], capsys)
    doc = json.loads(out)
    assert code == 0 and all(r["relative_residual"] < 1e-8 for r in doc["reports"])


def test_check_ruled_out_assertion(solution_file, capsys):
    argv = ["check", "--dim", "5", "--h", "-0.2", "--sg", "-1", "--weyl", "product:2x3",
            "--bubble", solution_file]
    code, out, _ = run(argv, capsys)
    assert code == 0 and json.loads(out)["verdict"] == "RULED_OUT"
    code, _, _ = run(argv + ["--assert-consistent"], capsys)
    assert code == 4


def test_check_from_summary_file(tmp_path, capsys):
    from nodal_bubbles.obstruction import summarize_bubble
    path = tmp_path / "summary.json"
    path.write_text(json.dumps(summarize_bubble(pr.standard_bubble(3)).to_document()))
    code, out, _ = run(["check", "--dim", "3", "--h", "0.5", "--sg", "6", "--mass-from-h0", "0.5",
                        "--bubble", str(path), "--mode", "decay"], capsys)
    assert code == 0 and json.loads(out)["verdict"] == "RULED_OUT"


def test_check_dimension_inconsistency(capsys):
    code, _, err = run(["check", "--dim", "4", "--h", "0", "--sg", "1", "--bubble", "standard:5"], capsys)
    assert code == 2 and "dimension" in err


def test_curvature_dump(capsys):
    code, out, _ = run(["curvature", "--tensor", "random:6:2"], capsys)
    doc = json.loads(out)
    cli.validate({k: doc[k] for k in ("schema_version", "type", "n", "note", "components")}, "curvature-tensor")
    assert code == 0 and doc["trace_defect"] < 1e-12


def test_empty_report_gives_header_only():
    text = cli.emit_plot_data({"type": "obstruction-report", "audit": []})
    assert text == "term,value\n"
    assert cli.emit_plot_data({"type": "mass-sweep", "rows": []}) == "h0,mass\n"


def test_latitude_plot_data(ding_23_one_node):
    text = cli.emit_plot_data(ding_23_one_node.to_document())
    rows = list(csv.reader(text.splitlines()))
    assert rows[0] == ["t", "u", "du"]
    t = np.array([float(r[0]) for r in rows[1:]])
    assert t[0] == 0.0 and t[-1] == pytest.approx(np.pi / 2) and np.all(np.diff(t) > 0)


def test_biradial_plot_grid(ding_profile):
    header, rows = cli.plot_rows(ding_profile.to_document())
    assert header == ["r1", "r2", "V"] and len(rows) == 41 * 41


def test_profile_roundtrip_through_file(tmp_path, ding_profile):
    path = tmp_path / "p.json"
    cli.write_atomic(str(path), cli.dumps(ding_profile.to_document()))
    back = cli.load_profile(str(path))
    assert np.array_equal(back.lat.u, ding_profile.lat.u)
    x = np.random.default_rng(3).standard_normal((20, 5))
    assert np.array_equal(back.value(x), ding_profile.value(x))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.json"
    cli.write_atomic(str(target), "a")
    cli.write_atomic(str(target), "b")
    assert target.read_text() == "b"
    assert os.listdir(tmp_path) == ["out.json"]


def test_io_failure_surfaces(tmp_path, capsys):
    code, _, err = run(["mass3d", "--h0", "0.5", "--out", str(tmp_path / "missing" / "x.json")], capsys)
    assert code == 2 and "No such file" in err


def test_config_roundtrip_and_env(tmp_path, monkeypatch, capsys):
    cfg = cli.RunConfig({"montecarlo": {"rel_tol": 0.05}, "verdict_tol": 1e-7},
                        {"mass3d": str(tmp_path / "m.json")}, 11, "json")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = cli.RunConfig.load(str(path))
    assert back == cfg and back.to_dict() == cfg.to_dict()
    assert back.quad_spec("montecarlo", cli.nm.DEFAULT_MC).seed == 11
    assert back.quad_spec("quadrature_1d", cli.nm.DEFAULT_1D) == cli.nm.DEFAULT_1D
    monkeypatch.setenv(cli.CONFIG_ENV, str(path))
    code, out, _ = run(["mass3d", "--h0", "0.5"], capsys)
    assert code == 0 and out == ""
    assert json.loads((tmp_path / "m.json").read_text())["mass"] > 0


def test_config_rejects_unknown_fields(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tolerances": {"warp": 1}}))
    code, _, _ = run(["mass3d", "--h0", "0.5", "--config", str(path)], capsys)
    assert code == 2


def test_default_config_falls_back_to_module_defaults(monkeypatch):
    monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
    cfg = cli.RunConfig.load(None)
    assert cfg == cli.RunConfig()
    assert cfg.quad_spec("quadrature_2d", cli.nm.DEFAULT_2D) == cli.nm.DEFAULT_2D


@pytest.mark.slow
def test_ding_example_subprocess(tmp_path):
    out = tmp_path / "sol.json"
    res = subprocess.run([sys.executable, "-m", "nodal_bubbles.cli", "ding", "--p", "2", "--q", "3",
                          "--nodes", "2", "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    doc = json.loads(out.read_text())
    cli.validate(doc, "latitude-solution")
    assert doc["nodes"] == 2 and doc["residual_sup"] < 1e-6
    assert doc["metadata"]["flat_residual"] < 1e-6
