import csv
import json
import subprocess
import sys

import pytest

from labelerhot import cli
from labelerhot.gbdt import load_model
from labelerhot.synth import dataset_digest

from conftest import TINY


def run(argv):
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY.to_dict()))
    return p


def test_synth_writes_manifests(tiny_config_file, tmp_path, capsys):
    assert run(["synth", "--config", tiny_config_file, "--seed", 5, "--out", tmp_path / "a"]) == 0
    lines = capsys.readouterr().out.split()
    assert lines == [str(tmp_path / "a" / "train" / "manifest.json"), str(tmp_path / "a" / "test" / "manifest.json")]
    run(["synth", "--config", tiny_config_file, "--seed", 5, "--out", tmp_path / "b"])
    assert dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")


def test_synth_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_train": 2, "n_blocks": 50}))
    assert run(["synth", "--config", bad, "--out", tmp_path / "x"]) == 1
    assert "error" in capsys.readouterr().err
    bad.write_text("{nope")
    assert run(["synth", "--config", bad]) == 2


def test_default_output_dir_from_env(tiny_config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("LABELERHOT_OUT", str(tmp_path / "env"))
    assert run(["synth", "--config", tiny_config_file]) == 0
    assert (tmp_path / "env" / "dataset" / "train" / "manifest.json").exists()


def test_missing_manifest_is_usage_error(capsys):
    assert run(["train", "--scenario", "A"]) == 2
    assert "requires --manifest" in capsys.readouterr().err
    assert run(["experiment"]) == 2


def test_unknown_scenario_rejected():
    assert run(["experiment", "--manifest", "x", "--scenario", "E"]) == 2


@pytest.fixture(scope="module")
def exp_config(tiny_dataset, tmp_path_factory):
    p = tmp_path_factory.mktemp("exp") / "exp.json"
    p.write_text(
        json.dumps(
            {
                "train_manifest": str(tiny_dataset / "train" / "manifest.json"),
                "test_manifest": str(tiny_dataset / "test" / "manifest.json"),
                "rec_seeds": [0, 1],
                "event_seeds": [100],
                "n_rec": 2,
                "n_pos": 2,
                "n_neg": 2,
            }
        )
    )
    return p


def test_experiment_command(exp_config, tmp_path, capsys):
    grid = json.dumps({"n_trees": [2], "max_depth": [2]})
    argv = ["experiment", "--config", exp_config, "--scenario", "A", "--scenario", "C", "--scheme", "v2",
            "--grid", grid, "--out", tmp_path]
    assert run(argv) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:3] == ["scenario", "scheme", "mode"]
    assert [line.split()[:3] for line in out[1:]] == [
        ["A", "none", "agnostic"],
        ["C", "v2", "agnostic"],
        ["C", "v2", "voting"],
    ]
    assert (tmp_path / "report.json").exists()


def test_experiment_exit_code_on_failed_cells(exp_config, tmp_path, capsys):
    argv = ["experiment", "--config", exp_config, "--scenario", "D", "--scheme", "v1",
            "--grid", '{"n_trees": [1]}', "--out", tmp_path]
    cfg = json.loads(exp_config.read_text())
    cfg["n_rec"] = 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cfg))
    argv[2] = bad
    assert run(argv) == 1
    assert "cells failed" in capsys.readouterr().err


def test_sweep_volume_command(exp_config, tmp_path, capsys):
    argv = ["sweep-volume", "--config", exp_config, "--scenario", "A", "--grid", '{"n_trees": [1]}',
            "--counts", 1, 2, "--out", tmp_path]
    assert run(argv) == 0
    rows = list(csv.DictReader((tmp_path / "volume.csv").open()))
    assert [r["count"] for r in rows] == ["1", "2"]


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    manifest = tiny_dataset / "train" / "manifest.json"
    params = json.dumps({"n_trees": 4, "max_depth": 2, "learning_rate": 0.3})
    common = ["--manifest", manifest, "--n-rec", 2, "--n-pos", 2, "--n-neg", 2, "--params", params]
    assert run(["train", "--scenario", "C", "--scheme", "v1", "--out", out / "c.json", *common]) == 0
    assert run(["train", "--scenario", "A", "--out", out / "a.json", *common]) == 0
    return out


def test_train_writes_model_and_spec(trained):
    model = load_model(trained / "c.json")
    assert model.scheme == "v1" and model.K == 3 and model.n_features == 62
    spec = json.loads((trained / "c.spec.json").read_text())
    assert spec["scenario"] == "C" and len(spec["examples"]) == 3 * 2 * (2 + 2)


def test_train_from_spec_reproduces_model(trained, tiny_dataset, capsys):
    argv = ["train", "--manifest", tiny_dataset / "train" / "manifest.json", "--spec", trained / "c.spec.json",
            "--scheme", "v1", "--params", '{"n_trees": 4, "max_depth": 2, "learning_rate": 0.3}',
            "--out", trained / "again.json"]
    assert run(argv) == 0
    assert (trained / "again.json").read_bytes() == (trained / "c.json").read_bytes()


def test_eval_two_modes(trained, tiny_dataset, tmp_path, capsys):
    argv = ["eval", "--manifest", tiny_dataset / "test" / "manifest.json", "--model", trained / "c.json",
            "--model", trained / "a.json", "--mode", "agnostic", "--mode", "voting", "--out", tmp_path]
    assert run(argv) == 0
    rows = list(csv.DictReader((tmp_path / "eval.csv").open()))
    # the consensus model has no labeler rows, so it gets no voting row
    assert [(r["scheme"], r["mode"]) for r in rows] == [("v1", "agnostic"), ("v1", "voting"), ("none", "agnostic")]
    assert all(0 < float(r["final_ap"]) <= 1 for r in rows)
    doc = json.loads((tmp_path / "eval.json").read_text())
    assert doc["provenance"]["test_seed"] == 0 and len(doc["rows"]) == 3
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_eval_needs_a_model(tiny_dataset):
    assert run(["eval", "--manifest", tiny_dataset / "test" / "manifest.json"]) == 2


def test_eval_missing_model_file(tiny_dataset, tmp_path, capsys):
    argv = ["eval", "--manifest", tiny_dataset / "test" / "manifest.json", "--model", tmp_path / "no.json"]
    assert run(argv) == 1


def test_labeler_report(tiny_dataset, tmp_path, capsys):
    argv = ["labeler-report", "--manifest", tiny_dataset / "test" / "manifest.json", "--out", tmp_path / "q.csv"]
    assert run(argv) == 0
    rows = list(csv.DictReader((tmp_path / "q.csv").open()))
    assert [(r["recording"], r["labeler"]) for r in rows] == [("test_000", f"L{i}") for i in range(1, 5)]
    assert all(0 <= float(r["precision"]) <= 1 and 0 <= float(r["recall"]) <= 1 for r in rows)
    assert capsys.readouterr().out == (tmp_path / "q.csv").read_text()


def test_labeler_report_without_four_labelers(tiny_dataset, capsys):
    assert run(["labeler-report", "--manifest", tiny_dataset / "train" / "manifest.json", "--out", "/dev/null"]) == 2


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "labelerhot.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
