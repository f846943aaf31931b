import json
from importlib import resources

import numpy as np
import pytest

from offline_tsc.cli import build_parser, main
from offline_tsc.core import bundled_config, load_config

STAGES = [
    ["simulate", "--days", "1"],
    ["decompose"],
    ["infer"],
    ["reward"],
    ["train", "--algo", "sql", "--steps", "200"],
    ["train", "--algo", "bc", "--steps", "200"],
    ["evaluate", "--policy", "fixed", "--days", "2", "--eval-seeds", "2"],
    ["evaluate", "--policy", "sql", "--days", "2", "--eval-seeds", "2"],
    ["evaluate", "--policy", "bc", "--days", "2", "--eval-seeds", "2"],
    ["report"],
]


def run_pipeline(out):
    for stage in STAGES:
        assert main([*stage, "--seed", "7", "--out-dir", str(out)]) == 0, stage


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    run_pipeline(a)
    run_pipeline(b)
    return a, b


def test_pipeline_is_deterministic(pipeline_runs):
    a, b = pipeline_runs
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert "report/table.csv" in map(str, names)
    for name in names:
        if name.name == "manifest.json":
            continue
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_manifest_records_stages(pipeline_runs):
    man = json.loads((pipeline_runs[0] / "manifest.json").read_text())
    h = bundled_config("ci").config_hash()
    for stage in ("simulate", "decompose", "infer", "reward", "train_sql", "evaluate_fixed",
                  "report"):
        assert man["stages"][stage]["config_hash"] == h
        assert man["stages"][stage]["seed"] == 7


def test_report_mean_row(pipeline_runs):
    lines = (pipeline_runs[0] / "report" / "table.csv").read_text().splitlines()
    assert lines[0] == "policy,day,total_delay,total_queue"
    rows = [line.split(",") for line in lines[1:]]
    for policy in ("fixed", "sql", "bc"):
        days = [r for r in rows if r[0] == policy and r[1] != "mean"]
        mean = [r for r in rows if r[0] == policy and r[1] == "mean"][0]
        assert len(days) == 2
        assert float(mean[2]) == pytest.approx(np.mean([float(r[2]) for r in days]), abs=1e-3)
        assert float(mean[3]) == pytest.approx(np.mean([float(r[3]) for r in days]), abs=1e-3)


def test_plot_data(pipeline_runs):
    report = pipeline_runs[0] / "report"
    scatter = (report / "delay_scatter.csv").read_text().splitlines()
    assert scatter[0] == "day,interval,estimated_delay,true_delay" and len(scatter) == 289
    assert (report / "daily_delay.csv").read_text().startswith("policy,day,mean_delay")


def test_hash_mismatch_is_refused(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["simulate", "--days", "1", "--out-dir", out]) == 0
    assert main(["decompose", "--out-dir", out]) == 0
    ci = bundled_config("ci")
    cfg = tmp_path / "other.ini"
    base = resources.files("offline_tsc").joinpath("data/ci.ini").read_text()
    cfg.write_text(base.replace("iterations = 1000", "iterations = 500"))
    capsys.readouterr()
    assert main(["infer", "--config", str(cfg), "--out-dir", out]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("ERROR ")
    payload = json.loads(err[len("ERROR "):])
    assert payload["code"] == "hash_mismatch"
    assert ci.config_hash() in payload["message"]
    assert load_config(cfg).config_hash() in payload["message"]


def test_missing_input_errors(tmp_path, capsys):
    assert main(["reward", "--out-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err[6:])["code"] == "missing_input"
    assert main(["report", "--out-dir", str(tmp_path)]) == 2
    assert main(["simulate", "--days", "0", "--out-dir", str(tmp_path)]) == 2


def test_bad_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[intersection]\nlanes = 2\n")
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err[6:])["code"] == "bad_config"


def test_help_lists_flags_with_units(capsys):
    parser = build_parser()
    for cmd in ("simulate", "decompose", "infer", "reward", "train", "evaluate", "report"):
        with pytest.raises(SystemExit):
            parser.parse_args([cmd, "--help"])
        text = capsys.readouterr().out
        for flag in ("--config", "--seed", "--out-dir", "--jobs"):
            assert flag in text
    with pytest.raises(SystemExit):
        parser.parse_args(["--help"])
    top = capsys.readouterr().out
    assert "veh/s" in top and "veh*s" in top
