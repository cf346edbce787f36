from __future__ import annotations

import json

from c4vqc.cli import main

TINY = {
    "dataset": {"kind": "tetromino", "copies": 0},
    "train": {"max_epochs": 2, "dtype": "float64"},
    "sweep": {"architectures": ["Equivariant", "NonEquivariant"], "seeds": [0, 1], "n_layers": [1]},
}


def _config(tmp_path, doc=TINY):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_generate_data(tmp_path):
    out = tmp_path / "data"
    assert main(["generate-data", "--copies", "2", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 144


def test_verify_symmetry(tmp_path):
    out = tmp_path / "report.json"
    assert main(["verify-symmetry", "--n", "3", "--images", "5", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["orbit_count"] == 3


def test_shapes(tmp_path, capsys):
    assert main(["shapes", "--table", "mnist"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [c["side"] for c in doc["chain"]] == [28, 18, 8, 6, 4]
    assert main(["shapes", "--side", "5", "--n-w", "7", "--n-c", "1"]) == 1


def test_train_then_evaluate(tmp_path):
    cfg = _config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--n-layers", "1", "--out", str(run)]) == 0
    assert (run / "history.csv").read_text().count("\n") == 3
    report = tmp_path / "metrics.json"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["count"] == 16 and 0 <= doc["f1"] <= 1


def test_landscape(tmp_path):
    out = tmp_path / "l.json"
    assert main(["landscape", "--arch", "Equivariant", "--n-layers", "1", "--samples", "5", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["stats"]["Equivariant"]["n_samples"] == 5


def test_compare_is_byte_deterministic(tmp_path):
    cfg = _config(tmp_path)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()
    assert a.count(b"\r\n") == 3


def test_exit_codes(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    bad = _config(tmp_path, {"sweep": {"seeds": []}})
    assert main(["compare", "--config", bad, "--out", str(tmp_path / "y")]) == 1
    assert main(["evaluate", "--checkpoint", str(tmp_path / "nope.json")]) == 2


def test_nan_loss_exits_with_numerical_code(tmp_path):
    doc = {**TINY, "train": {"max_epochs": 1, "feature_range": [0.0, float("nan")]}}
    assert main(["compare", "--config", _config(tmp_path, doc), "--out", str(tmp_path / "z")]) == 3
