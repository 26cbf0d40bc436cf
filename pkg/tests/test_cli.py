"""Command-line interface: argument plumbing and output formats."""

import json

import pytest

from vstab.cli import main


def test_run_writes_session_files(tmp_path, capsys):
    out = tmp_path / "session"
    rc = main(["run", "--case", "case14", "--k-start", "1.0", "--k-end",
               "1.02", "--step", "0.01", "--watch", "9,14",
               "--contingencies", "5-6", "--outdir", str(out)])
    assert rc == 0
    assert "3 reports" in capsys.readouterr().out
    doc = json.loads((out / "session.json").read_text())
    assert len(doc["reports"]) == 3
    assert len(doc["verdicts"]) == 1
    assert "vsi@9" in (out / "reports.csv").read_text().splitlines()[0]


def test_run_streams_json_to_stdout(capsys):
    rc = main(["run", "--case", "case14"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["reports"]) == 1
    assert doc["meta"]["config"]["case"] == "case14"


def test_run_accepts_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"case": "case14", "k_end": 1.01}))
    rc = main(["run", "--config", str(cfg), "--k-end", "1.02"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["meta"]["config"]["k_end"] == 1.02
    assert len(doc["reports"]) == 3


def test_security_ranks_selected_branches(capsys):
    rc = main(["security", "--case", "case14", "--contingencies",
               "5-6,2-3,7-8"])
    assert rc == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["rank"] for r in rows] == [1, 2, 3]
    assert rows[0]["label"] == "7-8"          # islanding ranks first
    assert rows[0]["status"] == "islanding" and rows[0]["critical"]


def test_security_reports_nonconvergent_base(capsys):
    rc = main(["security", "--case", "case14", "--k", "5.0",
               "--contingencies", "5-6"])
    assert rc == 1
    assert "does not converge" in capsys.readouterr().err


def test_evaluate_small_study(capsys):
    rc = main(["evaluate", "--case", "case14", "--k", "1.0", "--top", "3",
               "--min-recall", "0.8"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert "case14@k=1.0" in doc["thresholds"]
    m = doc["confusion"]
    assert m["tp"] + m["fp"] + m["fn"] + m["tn"] == 20
    assert 0 <= doc["metrics"]["accuracy"] <= 100
    assert doc["ranking_agreement"]["case14@k=1.0"]["n"] <= 3


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
