import csv
import json

import numpy as np
import pytest

from freqdisc.cli import main
from freqdisc.config import RunConfig


TINY = """
[dataset]
{ds_line}
n_classes = 4
n_known = 2
per_class = 6
size = 16

[model]
enc_hidden = 24
embed_dim = 12
proj_hidden = 12
proj_dim = 6

[train]
epochs = 2
batch_size = 16
eval_every = 2
seed = 0

[output]
dir = {out}
"""


def write_config(tmp_path, name="cfg.ini", **overrides):
    out = overrides.pop("out", tmp_path / "run")
    ds_path = overrides.pop("dataset_path", None)
    ds_line = f"path = {ds_path}" if ds_path else ""
    text = TINY.format(out=out, ds_line=ds_line)
    for extra in overrides.pop("extra", []):
        text += extra + "\n"
    path = tmp_path / name
    path.write_text(text)
    return path


def test_config_defaults_carry_paper_values():
    cfg = RunConfig()
    assert cfg.beta == 0.35
    assert cfg.eta == 0.9
    assert cfg.epsilon == 0.1
    assert cfg.knn_k == 3
    assert cfg.window_ratio == 0.04
    assert cfg.tau_u == 0.07 and cfg.tau_c == 0.1 and cfg.tau_s == 0.1
    assert cfg.tau_t_start == 0.07 and cfg.tau_t_end == 0.04
    assert cfg.tau_t_warmup_epochs == 30
    assert cfg.lr0 == 0.1


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[train]\nepochs = 3\nbogus_knob = 1\n")
    with pytest.raises(ValueError, match="bogus_knob"):
        RunConfig.from_file(path)


def test_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[mystery]\nx = 1\n")
    with pytest.raises(ValueError, match="mystery"):
        RunConfig.from_file(path)


def test_config_rejects_bad_value(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[objectives]\nbeta = 1.7\n")
    with pytest.raises(ValueError, match="beta"):
        RunConfig.from_file(path)


def test_config_missing_file():
    with pytest.raises(FileNotFoundError):
        RunConfig.from_file("/nonexistent/cfg.ini")


def test_generate_and_force(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["generate", "--config", str(cfg)]) == 0
    ds = tmp_path / "run" / "dataset"
    assert (ds / "manifest.csv").exists()
    assert main(["generate", "--config", str(cfg)]) == 2  # refuses to clobber
    assert main(["generate", "--config", str(cfg), "--force"]) == 0
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert manifest["n_classes"] == 4
    assert manifest["version"].startswith("freqdisc-")
    capsys.readouterr()


def test_generate_deterministic_bytes(tmp_path):
    cfg_a = write_config(tmp_path, "a.ini", out=tmp_path / "a")
    cfg_b = write_config(tmp_path, "b.ini", out=tmp_path / "b")
    assert main(["generate", "--config", str(cfg_a)]) == 0
    assert main(["generate", "--config", str(cfg_b)]) == 0
    man_a = (tmp_path / "a" / "dataset" / "manifest.csv").read_bytes()
    man_b = (tmp_path / "b" / "dataset" / "manifest.csv").read_bytes()
    assert man_a == man_b
    png = "labeled/A-c00-0000.png"
    assert (tmp_path / "a" / "dataset" / png).read_bytes() == (
        tmp_path / "b" / "dataset" / png
    ).read_bytes()


def test_separate_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    assert main(["separate", "--config", str(cfg)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "partition.csv")))
    assert len(rows) == 42  # (24 domain-A - 6 labeled) + 24 domain-B
    assert set(rows[0]) == {"sample_id", "density_score", "p_known", "hard_label"}
    gmm = json.loads((tmp_path / "run" / "gmm.json").read_text())
    assert gmm["mean_known"] >= gmm["mean_unknown"]
    capsys.readouterr()


def test_separate_rejects_small_labeled_set(tmp_path, capsys):
    cfg = write_config(
        tmp_path, extra=["[separation]", "knn_k = 100"]
    )
    main(["generate", "--config", str(cfg)])
    assert main(["separate", "--config", str(cfg)]) == 2
    assert "smaller than K" in capsys.readouterr().err


def test_train_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    assert main(["train", "--config", str(cfg)]) == 0
    run = tmp_path / "run"
    header = open(run / "metrics.csv").readline().strip()
    assert header == "step,epoch,loss_kd,loss_ud,entropy_reg,loss_total,lr,tau_t"
    assert (run / "model.ckpt").exists()
    report = json.loads((run / "eval_report.json").read_text())
    assert "overall" in report["results"]
    preds = list(csv.DictReader(open(run / "predictions.csv")))
    assert len(preds) == 42
    capsys.readouterr()


def test_train_determinism_byte_identical(tmp_path, capsys):
    cfg_a = write_config(tmp_path, "a.ini", out=tmp_path / "a")
    cfg_b = write_config(tmp_path, "b.ini", out=tmp_path / "b")
    main(["generate", "--config", str(cfg_a)])
    main(["generate", "--config", str(cfg_b)])
    assert main(["train", "--config", str(cfg_a)]) == 0
    assert main(["train", "--config", str(cfg_b)]) == 0
    bytes_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    bytes_b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert bytes_a == bytes_b
    capsys.readouterr()


def test_train_toggles_change_behavior(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    cfg = write_config(tmp_path, dataset_path=tmp_path / "run" / "dataset")
    assert main(["train", "--config", str(cfg), "--baseline", "--out", str(tmp_path / "base")]) == 0
    base_metrics = (tmp_path / "base" / "metrics.csv").read_text().splitlines()
    # Baseline routes everything through the known-domain path.
    for line in base_metrics[1:]:
        assert line.split(",")[3] == "0.00000000"  # loss_ud column
    manifest = json.loads((tmp_path / "base" / "run_manifest.json").read_text())
    assert manifest["use_fds"] is False
    assert manifest["use_cdfp"] is False
    capsys.readouterr()


def test_evaluate_perfect_predictions(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    manifest_rows = list(
        csv.DictReader(open(tmp_path / "run" / "dataset" / "manifest.csv"))
    )
    preds_path = tmp_path / "perfect.csv"
    with open(preds_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "prediction"])
        for row in manifest_rows:
            if row["split"] == "unlabeled":
                writer.writerow([row["sample_id"], row["hidden_label"]])
    assert main(["evaluate", "--config", str(cfg), "--predictions", str(preds_path)]) == 0
    report = json.loads((tmp_path / "run" / "eval_report.json").read_text())
    assert report["results"]["overall"]["All"]["acc"] == 1.0
    assert report["results"]["B"]["All"]["acc"] == 1.0
    capsys.readouterr()


def test_evaluate_rejects_missing_ids(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    preds_path = tmp_path / "partial.csv"
    with open(preds_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "prediction"])
        writer.writerow(["A-c00-0000", "0"])
    assert main(["evaluate", "--config", str(cfg), "--predictions", str(preds_path)]) == 2
    err = capsys.readouterr().err
    assert "missing" in err and "first 10" in err


def test_evaluate_requires_predictions_flag(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["evaluate", "--config", str(cfg)]) == 2
    capsys.readouterr()


def test_perturb_preview(tmp_path, capsys):
    cfg = write_config(tmp_path, extra=["[perturbation]", "eta = 0.5"])
    main(["generate", "--config", str(cfg)])
    assert main(["perturb-preview", "--config", str(cfg)]) == 0
    preview = tmp_path / "run" / "preview"
    manifest = json.loads((preview / "preview_manifest.json").read_text())
    assert len(manifest) > 0
    first = manifest[0]
    assert {"sample_id", "donor_class", "class_aware", "window_ratio"} <= set(first)
    assert (preview / f"{first['sample_id']}_before.png").exists()
    assert (preview / f"{first['sample_id']}_after.png").exists()
    capsys.readouterr()


def test_seed_override_changes_run(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["generate", "--config", str(cfg)])
    cfg = write_config(tmp_path, dataset_path=tmp_path / "run" / "dataset")
    assert main(["train", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "s1")]) == 0
    assert main(["train", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "s2")]) == 0
    m1 = (tmp_path / "s1" / "metrics.csv").read_bytes()
    m2 = (tmp_path / "s2" / "metrics.csv").read_bytes()
    assert m1 != m2
    capsys.readouterr()
