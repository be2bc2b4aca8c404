import csv
import json

import numpy as np
import pytest

from sepstat.bcl import decompose
from sepstat.checks import check_all
from sepstat.hilbert import VectorState
from sepstat.cli import main
from sepstat.models import default_bcl
from sepstat.runner import dumps, from_cmatrix, run
from sepstat.scenario import load_preset, parse_scenario, preset_names


def test_bcl_table_matches_decomposition():
    rep = run(load_preset("bcl")).report
    o, _ = default_bcl()
    v = np.zeros(o.space.dim, complex)
    v[o.offsets()[0]] = v[o.offsets()[1]] = 1
    want = decompose(VectorState(o.space, v / np.linalg.norm(v)), o).probabilities
    got = list(rep["result"]["probabilities"].values())
    assert np.allclose(got, want, atol=1e-12)
    assert rep["result"]["unreduced_coherence"] > 0.1


def test_chamber_report_bytes_stable():
    sc = load_preset("chamber")
    assert sc.seed == 42 and sc.trials == 100
    a = dumps(run(sc, workers=1).report)
    b = dumps(run(sc, workers=3).report)
    assert a == b
    assert "timing" not in a


def test_timing_opt_in():
    rep = run(load_preset("epr"), timing=True).report
    assert rep["timing"]["seconds"] >= 0


def test_scattering_flag():
    rep = run(load_preset("scattering_entanglement")).report
    assert rep["result"]["reduction"] == "no reduction applied"
    assert rep["passed"]


def test_branch_states_roundtrip():
    rep = run(load_preset("fixed_env")).report
    parsed = json.loads(dumps(rep))
    for a, b in zip(rep["result"]["gemenge"], parsed["result"]["gemenge"]):
        assert np.max(np.abs(from_cmatrix(a["state"]) - from_cmatrix(b["state"]))) <= 1e-12


def test_omit_states():
    rep = run(load_preset("flexible"), states=False).report
    assert all("state" not in b for b in rep["result"]["gemenge"])


def test_tolerance_override_only_upper_bounds():
    rep = run(load_preset("chamber"), tolerance=1e-30).report
    lower = [c for c in rep["checks"] if c["relation"] == ">="]
    assert lower and all(c["bound"] != 1e-30 for c in lower)


def test_check_filter():
    rep = check_all("locality")
    assert rep["passed"]
    assert {c["module"] for c in rep["checks"]} == {"locality"}


def test_check_tight_tolerance_fails():
    rep = check_all("scattering", tolerance=1e-20)
    assert not rep["passed"]


def test_check_unknown_module():
    with pytest.raises(ValueError):
        check_all("nope")


def test_cli_run_ok(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["run", "epr", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["kind"] == "epr" and rep["passed"]


def test_cli_run_stdout(capsys):
    assert main(["run", "bcl", "--omit-states"]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "bcl"


def test_cli_bad_input(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"schema_version": "1", "kind": "flexible", "prep_region": [9]}))
    assert main(["run", str(p)]) == 2
    assert "prep_region" in capsys.readouterr().err


def test_cli_missing_file(capsys):
    assert main(["run", "/no/such/file.json"]) == 2


def test_cli_bad_args(capsys):
    assert main(["run", "bcl", "--workers", "0"]) == 2
    assert main(["frobnicate"]) == 2


def test_cli_check_failure_exit(capsys):
    assert main(["check", "--filter", "scattering", "--tolerance", "1e-20"]) == 1
    assert "checks passed" in capsys.readouterr().out


def test_cli_check_json(capsys):
    assert main(["check", "--filter", "hilbert-core", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]


def test_cli_tracks(tmp_path, capsys):
    p = tmp_path / "t.csv"
    assert main(["tracks", "chamber", "--csv", str(p), "--trials", "10"]) == 0
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["trial", "layer", "cube"]
    assert len(rows) == 1 + 10 * 4


def test_cli_tracks_wrong_kind(tmp_path, capsys):
    assert main(["tracks", "epr", "--csv", str(tmp_path / "x.csv")]) == 2


def test_cli_samples_csv(tmp_path, capsys):
    p = tmp_path / "s.csv"
    assert main(["run", "hbt_c0", "--trials", "50", "--samples-csv", str(p)]) == 0
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["trial", "signal"] and len(rows) == 51


def test_cli_presets(capsys):
    assert main(["presets"]) == 0
    assert "chamber" in capsys.readouterr().out.split()


def test_run_failing_invariant_exit(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"schema_version": "1", "kind": "epr", "tolerances": {"check": 1e-30}}))
    code = main(["run", str(p)])
    rep = json.loads(capsys.readouterr().out)
    assert code == (0 if rep["passed"] else 1)


def test_parse_then_run_hbt():
    sc = parse_scenario({"schema_version": "1", "kind": "hbt", "a": 0.6, "b": 0.8, "c": 0, "trials": 0})
    rep = run(sc).report
    assert rep["passed"]


@pytest.mark.parametrize("name", preset_names())
def test_every_preset_serializes_and_passes(name):
    rep = run(load_preset(name), trials=min(load_preset(name).trials, 2000)).report
    assert json.loads(dumps(rep))["passed"]
