import hashlib
import json
import os

import numpy as np
import pytest

from padphys.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from padphys.manifest import load_manifest
from padphys.metrics import read_report_csv
from padphys.network import load_weights, save_weights

CONFIG = {
    "seed": 3,
    "synth": {"n_users": 2, "clips_per_user": 4, "frames_per_clip": 40},
    "preprocess": {"target_size": 12},
    "network": {"input_size": 12, "conv_filters": [4, 4, 6, 6], "head_hidden": 8},
    "train": {"epochs": 2, "pairs_per_clip": 6},
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """gen -> scratch -> frozen_transfer -> calibrate -> eval in one directory."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    m = str(d / "corpus" / "manifest.jsonl")
    assert main(["gen", "--config", str(cfg), "--out", str(d / "corpus")]) == EXIT_OK
    assert main(["train", "--manifest", m, "--config", str(cfg), "--regime", "scratch", "--out", str(d / "s.w")]) == 0
    assert main(["train", "--manifest", m, "--config", str(cfg), "--regime", "frozen_transfer",
                 "--init-weights", str(d / "s.w"), "--out", str(d / "p.w")]) == 0
    assert main(["calibrate", "--manifest", m, "--weights", str(d / "p.w"), "--out", str(d / "thr.json")]) == 0
    assert main(["eval", "--manifest", m, "--weights", str(d / "p.w"), "--threshold", str(d / "thr.json"),
                 "--out-dir", str(d / "rep")]) == 0
    return d


def test_gen_count_and_determinism(tmp_path, run):
    cfg = run / "cfg.json"
    m = load_manifest(run / "corpus" / "manifest.jsonl")
    assert len(m.clips) == 2 * 4 * (1 + 3)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert sha(tmp_path / "again" / "manifest.jsonl") == sha(run / "corpus" / "manifest.jsonl")


def test_gen_seed_7_twice(tmp_path):
    args = ["gen", "--seed", "7"]
    small = tmp_path / "c.json"
    small.write_text(json.dumps({"synth": {"n_users": 1, "clips_per_user": 1, "frames_per_clip": 8}}))
    assert main(args + ["--config", str(small), "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--config", str(small), "--out", str(tmp_path / "b")]) == 0
    assert sha(tmp_path / "a" / "manifest.jsonl") == sha(tmp_path / "b" / "manifest.jsonl")
    assert json.loads((tmp_path / "a" / "manifest.jsonl").read_text().splitlines()[0])["preprocess"]["synth"]["seed"] == 7


def test_env_seed_below_flag(tmp_path, monkeypatch):
    small = tmp_path / "c.json"
    small.write_text(json.dumps({"seed": 1, "synth": {"n_users": 1, "clips_per_user": 1, "frames_per_clip": 8}}))
    monkeypatch.setenv("PADPHYS_SEED", "5")
    assert main(["gen", "--config", str(small), "--out", str(tmp_path / "env")]) == 0
    assert main(["gen", "--config", str(small), "--out", str(tmp_path / "flag"), "--seed", "9"]) == 0
    seed = lambda p: json.loads((p / "manifest.jsonl").read_text().splitlines()[0])["preprocess"]["synth"]["seed"]
    assert seed(tmp_path / "env") == 5 and seed(tmp_path / "flag") == 9


def test_gen_invalid_band_leaves_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"synth": {"heart_rate_hz": [0.2, 5.0]}}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert sorted(os.listdir(tmp_path)) == ["bad.json"]


def test_usage_errors(run, capsys):
    m = str(run / "corpus" / "manifest.jsonl")
    assert main(["train", "--manifest", m, "--regime", "frozen_transfer", "--out", str(run / "x.w")]) == EXIT_USAGE
    assert "--init-weights" in capsys.readouterr().err
    assert main(["train", "--manifest", m, "--regime", "scratch", "--init-weights", str(run / "s.w"),
                 "--out", str(run / "x.w")]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["gen", "--config", str(run / "missing.json"), "--out", str(run / "z")]) == EXIT_USAGE
    assert not (run / "x.w").exists()


def test_data_error(run):
    assert main(["calibrate", "--manifest", str(run / "nope.jsonl"), "--weights", str(run / "p.w"),
                 "--out", str(run / "t.json")]) == EXIT_DATA


def test_numeric_error(run, tmp_path):
    w = load_weights(run / "p.w")
    w.params["head.out.bias"].data[:] = np.nan
    save_weights(w, tmp_path / "nan.w")
    assert main(["calibrate", "--manifest", str(run / "corpus" / "manifest.jsonl"), "--weights",
                 str(tmp_path / "nan.w"), "--out", str(tmp_path / "t.json")]) == EXIT_NUMERIC


def test_provenance_chain(run):
    w = load_weights(run / "p.w")
    assert [p["tag"] for p in w.provenance] == ["deepphys", "pad"]
    assert [p["regime"] for p in w.provenance] == ["scratch", "frozen_transfer"]
    assert (run / "p.w.log.csv").read_text().startswith("epoch,train_loss,val_loss,seconds\n")


def test_train_same_seed_identical(run, tmp_path):
    m = str(run / "corpus" / "manifest.jsonl")
    assert main(["train", "--manifest", m, "--config", str(run / "cfg.json"), "--regime", "frozen_transfer",
                 "--init-weights", str(run / "s.w"), "--out", str(tmp_path / "p2.w")]) == 0
    assert sha(tmp_path / "p2.w") == sha(run / "p.w")


def test_calibrate_val_only_and_idempotent(run, tmp_path):
    doc = json.loads((run / "thr.json").read_text())
    m = load_manifest(run / "corpus" / "manifest.jsonl")
    assert doc["n_val"] == len(m.split("val")) != len(m.clips)
    assert doc["n_bonafide"] + doc["n_attack"] == doc["n_val"]
    assert main(["calibrate", "--manifest", str(run / "corpus" / "manifest.jsonl"), "--weights", str(run / "p.w"),
                 "--out", str(tmp_path / "thr2.json")]) == 0
    assert (tmp_path / "thr2.json").read_bytes() == (run / "thr.json").read_bytes()


def test_eval_outputs(run, capsys):
    rows = read_report_csv((run / "rep" / "report.csv").read_text())
    m = load_manifest(run / "corpus" / "manifest.jsonl")
    present = {c.attack_type for c in m.split("test") if not c.is_bonafide}
    assert {r.name for r in rows} == present | {"Total"}
    for r in rows:
        assert abs(r.acer - (r.apcer + r.bpcer) / 2) <= 0.005 / 100 + 1e-12
    svg = (run / "rep" / "roc.svg").read_text()
    assert svg.count("<polyline") == len(present) + 1
    assert (run / "rep" / "roc.csv").read_text().startswith("curve,fpr,tpr,threshold\n")
    assert main(["report", str(run / "rep" / "report.csv")]) == 0
    assert "Total" in capsys.readouterr().out


def test_separable_validation_gives_zero_eer(run, tmp_path):
    """Calibrate on a validation split that a hand-built model separates perfectly.

    Val attacks are made static, frames and boxes alike (zero motion input, hence zero features).  The head
    pairs hidden units as tanh(1 + x) and tanh(1 - x) with output weights -1, which is
    even in x and strictly smallest at x = 0, so every moving bona-fide clip scores
    above every static attack.
    """
    import shutil

    from padphys.network import NetworkConfig, init_weights
    from padphys.preprocess import read_raw, write_raw

    corpus = tmp_path / "corpus"
    shutil.copytree(run / "corpus", corpus)
    m = load_manifest(corpus / "manifest.jsonl")
    for e in m.split("val"):
        if not e.is_bonafide:
            frames = read_raw(m.resolve(e))
            write_raw(m.resolve(e), np.repeat(frames[:1], len(frames), axis=0))
            e.bboxes = [e.bboxes[0]] * len(e.bboxes)
    m.save(corpus / "manifest.jsonl")
    net = NetworkConfig.from_dict({**CONFIG["network"], "head": "binary"})
    w = init_weights(net, 0)
    rows = np.random.default_rng(0).normal(size=(net.head_hidden // 2, net.n_features()))
    w.params["head.hidden.weight"].data[:] = np.repeat(rows, 2, axis=0) * np.tile([1.0, -1.0], len(rows))[:, None]
    w.params["head.hidden.bias"].data[:] = 1.0
    w.params["head.out.weight"].data[:] = -1.0
    save_weights(w, tmp_path / "sep.w")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preprocess": CONFIG["preprocess"]}))
    assert main(["calibrate", "--manifest", str(corpus / "manifest.jsonl"), "--weights", str(tmp_path / "sep.w"),
                 "--config", str(cfg), "--out", str(tmp_path / "thr.json")]) == 0
    doc = json.loads((tmp_path / "thr.json").read_text())
    assert doc["eer"] == 0.0 and doc["n_attack"] > 0 and doc["n_bonafide"] > 0
