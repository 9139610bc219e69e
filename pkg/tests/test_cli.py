import csv
import json
import subprocess
import sys

import pytest

from ick.cli import main

TINY_TRAIN = {
    "seed": 5,
    "dataset": {"generator": "gp_synthetic", "n": 80, "combine": "product"},
    "split": {"kind": "random", "ratio": 0.5},
    "model": {
        "p": 4,
        "branches": [
            {"type": "nn", "hidden": [8], "source": 0},
            {"type": "kernel", "source": 1, "kernel": {"type": "SpectralMixture", "n_components": 2}},
        ],
    },
    "train": {"epochs": 1, "batch_size": 20},
}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_train_metrics_schema_and_outputs(tmp_path):
    cfg = write_config(tmp_path, TINY_TRAIN)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert {"rmse", "mae", "spearman"} <= set(doc["metrics"])
    assert doc["seed"] == 5 and doc["config"]["model"]["p"] == 4
    for f in ("predictions.csv", "loss.csv", "checkpoint.json", "timing.json"):
        assert (tmp_path / "o" / f).exists()


def test_train_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, TINY_TRAIN)
    for d in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, TINY_TRAIN)
    assert main(["train", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "metrics.json").read_text())["seed"] == 9


def test_ensemble_command(tmp_path):
    doc = dict(TINY_TRAIN, ensemble={"n_members": 2}, train={"epochs": 1, "batch_size": 40, "optimizer": "sgd", "lr": 1e-3})
    cfg = write_config(tmp_path, doc)
    assert main(["ensemble", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    metrics = json.loads((tmp_path / "o" / "metrics.json").read_text())["metrics"]
    assert "msll" in metrics
    manifest = json.loads((tmp_path / "o" / "ensemble" / "manifest.json").read_text())
    assert manifest["members"] == ["member_0000.json", "member_0001.json"]


def test_sweep_rows(tmp_path):
    cfg = write_config(tmp_path, {"seed": 0, "sweep": {"n_seeds": 2}})
    assert main(["sweep-p", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert {int(r["p"]) for r in rows} == {2, 4, 8, 16, 32}
    assert {"frobenius", "max_abs", "wall_time"} <= set(rows[0])
    assert len({(r["p"], r["seed"]) for r in rows}) == 10


def test_gen_then_csv_train(tmp_path):
    gen = write_config(tmp_path, {"seed": 1, "dataset": {"generator": "synth_tanh", "n": 60}}, "gen.json")
    assert main(["gen", "--config", gen, "--out", str(tmp_path / "g")]) == 0
    schema = json.loads((tmp_path / "g" / "schema.json").read_text())
    doc = dict(TINY_TRAIN)
    doc["dataset"] = {"csv": str(tmp_path / "g" / "data.csv"), "schema": schema}
    doc["model"] = {"p": 2, "branches": [{"type": "nn", "hidden": [4], "source": s} for s in range(3)]}
    assert main(["train", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "t")]) == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, capsys):
    bad = dict(TINY_TRAIN, dataset={"generator": "nope"})
    assert main(["train", "--config", write_config(tmp_path, bad, "bad.json"), "--out", str(tmp_path / "o")]) == 2
    bad = dict(TINY_TRAIN, train={"epochs": 1, "lr": -1.0})
    assert main(["train", "--config", write_config(tmp_path, bad, "lr.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 4
    csv_cfg = dict(TINY_TRAIN, dataset={"csv": str(tmp_path / "none.csv"), "schema": {"sources": ["x"], "target": "y"}})
    assert main(["train", "--config", write_config(tmp_path, csv_cfg, "csv.json"), "--out", str(tmp_path / "o")]) == 4
    diverge = dict(TINY_TRAIN, train={"epochs": 50, "optimizer": "sgd", "lr": 1e6, "batch_size": 40})
    assert main(["train", "--config", write_config(tmp_path, diverge, "div.json"), "--out", str(tmp_path / "o")]) == 3
    assert "error" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    out = tmp_path / "s"
    r = subprocess.run([sys.executable, "-m", "ick.cli", "spectrum", "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((out / "metrics.json").read_text())["metrics"]["eigen_gap_ratio"] > 10
