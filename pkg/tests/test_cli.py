import json

import pytest

from yamabe_gluing.cli import load_config, run


def test_delaunay_command_writes_outputs(tmp_path):
    csv = tmp_path / "orbit.csv"
    rc = run(["delaunay", "--dim", "4", "--eps", "1e-3", "--out", str(tmp_path), "--emit", str(csv)])
    assert rc == 0
    assert csv.read_text().startswith("# N=4")
    doc = json.loads((tmp_path / "delaunay.json").read_text())
    assert doc["passed"] is True and doc["settings"]["dim"] == 4


@pytest.mark.parametrize("preset", ["triangle-N3", "pair-N3"])
def test_balance_command(tmp_path, preset):
    assert run(["balance", "--preset", preset, "--out", str(tmp_path)]) == 0


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "pair-N3", "eps": 0.02, "tgrid_per_period": 1024}))
    assert run(["balance", "--config", str(cfg), "--eps", "0.005", "--out", str(tmp_path)]) == 0
    settings = json.loads((tmp_path / "balance.json").read_text())["settings"]
    assert settings["eps"] == 0.005 and settings["tgrid_per_period"] == 1024 and settings["preset"] == "pair-N3"


def test_malformed_config_is_a_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"eps": 1e-2,,}')
    assert run(["balance", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 1" in capsys.readouterr().err
    unknown = tmp_path / "unknown.json"
    unknown.write_text('{"epsilon": 1e-2}')
    assert run(["balance", "--config", str(unknown), "--out", str(tmp_path)]) == 2


def test_load_config_accepts_dashes(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"max-iter": 4, "points": [[0, 0, 0], [6, 0, 0]], "q": [1, 1]}')
    doc = load_config(str(p))
    assert doc["max_iter"] == 4 and len(doc["points"]) == 2


def test_invalid_values_rejected(tmp_path):
    assert run(["balance", "--eps", "-1", "--out", str(tmp_path)]) == 2
    assert run(["balance", "--preset", "nope", "--out", str(tmp_path)]) == 2
    assert run(["verify", "--only", "99", "--out", str(tmp_path)]) == 2


def test_linear_on_pair_reports_singular_system(tmp_path, capsys):
    assert run(["linear", "--preset", "pair-N3", "--out", str(tmp_path)]) == 1
    assert "singular" in capsys.readouterr().err.lower()


def test_verify_and_report(tmp_path):
    assert run(["verify", "--only", "5", "--only", "8", "--out", str(tmp_path)]) == 0
    assert run(["balance", "--out", str(tmp_path)]) == 0
    (tmp_path / "stray.json").write_text("{not json")
    assert run(["report", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["stages"]) == {"verify", "balance"}
    assert "| verify |" in (tmp_path / "report.md").read_text()


def test_report_without_outputs_fails(tmp_path):
    assert run(["report", "--out", str(tmp_path)]) == 1
