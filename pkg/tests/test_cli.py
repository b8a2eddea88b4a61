import csv
import json

import numpy as np
import pytest

from gaitdiff.cli import main
from gaitdiff.dataset import load_dataset

TINY = ["--latent-dim", "3", "--enc-hidden", "6", "--enc-layers", "2", "--den-hidden", "8",
        "--den-layers", "2", "--temb-dim", "8", "--T", "10"]


def last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


@pytest.fixture
def gait_data(tmp_path):
    path = tmp_path / "d.brdf"
    assert main(["gen-data", "--out", str(path), "--pairs", "120", "--episode-steps", "20"]) == 0
    return path


def test_gen_data_deterministic_and_force(tmp_path, gait_data, capsys):
    other = tmp_path / "e.brdf"
    assert main(["gen-data", "--out", str(other), "--pairs", "120", "--episode-steps", "20"]) == 0
    assert other.read_bytes() == gait_data.read_bytes()
    assert load_dataset(other).n == 120
    capsys.readouterr()
    assert main(["gen-data", "--out", str(other), "--pairs", "120"]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["gen-data", "--out", str(other), "--pairs", "60", "--force"]) == 0
    assert load_dataset(other).n == 60
    assert "seed = 0" in (tmp_path / "e.brdf.manifest.txt").read_text()


def test_recipe_file(tmp_path, capsys):
    rec = tmp_path / "r.txt"
    rec.write_text("velocity=0.3 slope_deg=8 pairs=30\nvelocity=1.0 slope_deg=0 pairs=20\n")
    assert main(["gen-data", "--out", str(tmp_path / "d.brdf"), "--recipe", str(rec),
                 "--csv", str(tmp_path / "d.csv")]) == 0
    assert last_json(capsys)["n"] == 50
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 51


def test_train_eval_rollout_bench(tmp_path, gait_data, capsys):
    run = tmp_path / "run"
    base = ["train", "--data", str(gait_data), "--out-dir", str(run), "--epochs", "2",
            "--batch", "32", "--lr", "1e-3", "--seed", "3"] + TINY
    assert main(base) == 0
    info = last_json(capsys)
    assert info["epochs_run"] == 2
    with open(run / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "wall_s"] and len(rows) == 3
    assert main(base) == 2
    ck = str(run / "last.brck")

    assert main(["eval", "--ckpt", ck, "--data", str(gait_data)]) == 0
    ev = last_json(capsys)
    assert ev["n_train"] == 96 and ev["n_val"] == 24 and ev["val_over_train"] > 0

    out = tmp_path / "roll.csv"
    assert main(["rollout", "--ckpt", ck, "--steps", "5", "--out", str(out), "--warm-start"]) == 0
    ro = last_json(capsys)
    assert ro["mode"] == "ancestral" and 1 <= ro["steps"] <= 5
    assert out.read_text().splitlines()[0].startswith("step,phase,expert_0")

    assert main(["bench", "--ckpt", ck, "--trials", "20", "--warmup", "2",
                 "--deadline-ms", "1000", "--mode", "paper-literal"]) == 0
    b = last_json(capsys)
    assert b["report"]["T"] == 10 and b["report"]["pass"] and b["compare"]["T"] == 1
    assert main(["bench", "--ckpt", ck, "--trials", "5", "--warmup", "1",
                 "--deadline-ms", "0"]) == 1
    assert main(["bench", "--ckpt", str(tmp_path / "missing.brck")]) == 2

    assert main(["train", "--data", str(gait_data), "--out-dir", str(run), "--epochs", "3",
                 "--batch", "32", "--lr", "1e-3", "--seed", "3", "--resume", ck]) == 0
    with open(run / "metrics.csv") as fh:
        assert [r[0] for r in csv.reader(fh)] == ["epoch", "1", "2", "3"]


def test_train_without_normalization_and_config(tmp_path, gait_data, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch": 50, "no_normalize": True}))
    assert main(["train", "--config", str(cfg), "--data", str(gait_data),
                 "--out-dir", str(tmp_path / "r")] + TINY) == 0
    assert "no_normalize = True" in (tmp_path / "r" / "manifest.txt").read_text()
    assert last_json(capsys)["epochs_run"] == 1
    cfg.write_text(json.dumps({"epochz": 1}))
    assert main(["train", "--config", str(cfg), "--data", str(gait_data),
                 "--out-dir", str(tmp_path / "r2")]) == 2
    assert "epochz" in capsys.readouterr().err


def test_batch_too_large_is_reported(tmp_path, gait_data, capsys):
    assert main(["train", "--data", str(gait_data), "--out-dir", str(tmp_path / "r"),
                 "--epochs", "1", "--batch", "4000"] + TINY) == 2
    assert "batch" in capsys.readouterr().err


def test_bimodal_rollout(tmp_path, capsys):
    data = tmp_path / "b.brdf"
    assert main(["gen-data", "--task", "bimodal", "--out", str(data), "--pairs", "200"]) == 0
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out-dir", str(run), "--epochs", "1",
                 "--batch", "64"] + TINY) == 0
    out = tmp_path / "s.csv"
    assert main(["rollout", "--ckpt", str(run / "last.brck"), "--bimodal", "--out", str(out)]) == 0
    res = last_json(capsys)
    assert abs(res["mass_neg"] + res["mass_pos"] + res["mass_middle"] - 1) < 1e-12
    assert len(np.loadtxt(out, skiprows=1)) == 1000


def test_corrupt_dataset_reported(tmp_path, gait_data, capsys):
    bad = tmp_path / "bad.brdf"
    bad.write_bytes(gait_data.read_bytes()[:17])
    assert main(["train", "--data", str(bad), "--out-dir", str(tmp_path / "r")]) == 2
    assert "offset 17" in capsys.readouterr().err
