import csv
import json

import numpy as np
import pytest

from mdcnet.cli import main
from mdcnet.dataset import H36M32_TO_17, synthetic_motion
from mdcnet.imu import load_imu
from mdcnet.motion import load_motion, save_motion, validate


@pytest.fixture
def clips(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_motion(synthetic_motion(1, "walk", 125)[0], a)
    save_motion(synthetic_motion(2, "sit", 125)[0], b)
    return a, b


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert main(["plot", "--imu", "x.csv", "--bogus"]) == 2


def test_complete_happy_path(tmp_path, clips, toy_ckpt_125, capsys):
    out = tmp_path / "joined.json"
    code = main(["complete", "--h1", str(clips[0]), "--h2", str(clips[1]), "--tail", "15", "--head", "20",
                 "--fill", "90", "--seed", "7", "--ckpt", str(toy_ckpt_125), "--out", str(out)])
    assert code == 0
    joined = load_motion(out)
    assert joined.n_frames == 340 and validate(joined).ok
    prov = json.loads((tmp_path / "joined.json.config_used.json").read_text())
    assert prov["fill"] == 90 and prov["seed"] == 7 and prov["command"] == "complete"


def test_complete_is_byte_identical(tmp_path, clips, toy_ckpt_125):
    args = ["complete", "--h1", str(clips[0]), "--h2", str(clips[1]), "--fill", "90", "--seed", "3",
            "--ckpt", str(toy_ckpt_125)]
    assert main(args + ["--out", str(tmp_path / "1.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "2.json")]) == 0
    assert (tmp_path / "1.json").read_bytes() == (tmp_path / "2.json").read_bytes()


def test_complete_zero_fill_is_bounds_error(tmp_path, clips, toy_ckpt_125, capsys):
    code = main(["complete", "--h1", str(clips[0]), "--h2", str(clips[1]), "--fill", "0",
                 "--ckpt", str(toy_ckpt_125), "--out", str(tmp_path / "j.json")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: BoundsError:")


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["imu", "--motion", str(tmp_path / "none.json")]) == 1
    assert capsys.readouterr().err.startswith("error: IOError:")


def test_config_file_and_flag_precedence(tmp_path, clips, toy_ckpt_125):
    cfg = tmp_path / "c.toml"
    cfg.write_text("# completion defaults\ntail = 10\nhead = 10\nfill = 30\nseed = 5\nresample = 2\n")
    out = tmp_path / "j.json"
    assert main(["complete", "--config", str(cfg), "--fill", "40", "--h1", str(clips[0]),
                 "--h2", str(clips[1]), "--ckpt", str(toy_ckpt_125), "--out", str(out)]) == 0
    prov = json.loads((tmp_path / "j.json.config_used.json").read_text())
    assert (prov["tail"], prov["head"], prov["fill"], prov["seed"], prov["resample"]) == (10, 10, 40, 5, 2)
    assert load_motion(out).n_frames == 250 + 40


def test_bad_toml_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("tail = = 3\n")
    assert main(["train", "--synthetic", "2", "--config", str(cfg)]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_train_synthetic_writes_run(tmp_path):
    out = tmp_path / "run"
    args = ["train", "--synthetic", "8", "--window", "20", "--epochs", "2", "--steps", "10",
            "--latent-dim", "16", "--n-heads", "2", "--ff-dim", "32", "--n-blocks", "2",
            "--batch-size", "4", "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    prov = json.loads((out / "config_used.json").read_text())
    assert prov["train"]["epochs"] == 2 and prov["model"]["latent_dim"] == 16
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert len(rows) == 3
    assert main(args[:-1] + [str(tmp_path / "run2")]) == 0
    rows2 = list(csv.reader((tmp_path / "run2" / "metrics.csv").open()))
    assert [r[:2] for r in rows] == [r[:2] for r in rows2]


def test_train_resume(tmp_path):
    out = tmp_path / "run"
    base = ["train", "--synthetic", "8", "--window", "20", "--steps", "10", "--latent-dim", "16",
            "--n-heads", "2", "--ff-dim", "32", "--n-blocks", "2", "--batch-size", "4", "--out", str(out)]
    assert main(base + ["--epochs", "1"]) == 0
    assert main(base + ["--epochs", "2", "--resume", str(out / "model.ckpt")]) == 0
    assert len(list(csv.reader((out / "metrics.csv").open()))) == 3


def test_train_needs_data(capsys):
    assert main(["train"]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_imu_and_plot(tmp_path, clips):
    csv_path = tmp_path / "imu.csv"
    assert main(["imu", "--motion", str(clips[0]), "--magnetometer", "--out", str(csv_path)]) == 0
    trace, mag = load_imu(csv_path)
    assert len(trace) == 125 and mag is not None
    assert main(["plot", "--imu", str(csv_path), "--out", str(tmp_path / "imu.png")]) == 0
    assert (tmp_path / "imu.png").exists() and (tmp_path / "imu.png.config_used.json").exists()


def test_imu_file_normals(tmp_path, clips):
    normals = np.tile([0.0, 0.0, 1.0], (125, 1))
    np.save(tmp_path / "n.npy", normals)
    assert main(["imu", "--motion", str(clips[0]), "--normals", str(tmp_path / "n.npy"),
                 "--out", str(tmp_path / "imu.csv")]) == 0


def test_h36m_convert_then_eval(tmp_path, toy_ckpt_125):
    raw = tmp_path / "raw" / "S9"
    raw.mkdir(parents=True)
    seq = synthetic_motion(3, "walk", 250)[0]
    arr = np.zeros((250, 32, 3))
    arr[:, list(H36M32_TO_17)] = seq.data
    np.save(raw / "Walking.npy", arr)
    assert main(["h36m-convert", "--in", str(tmp_path / "raw"), "--out", str(tmp_path / "canon")]) == 0
    assert (tmp_path / "canon" / "config_used.json").exists()
    res = tmp_path / "res.json"
    assert main(["eval", "--ckpt", str(toy_ckpt_125), "--data", str(tmp_path / "canon"), "--samples", "2",
                 "--limit", "1", "--out", str(res)]) == 0
    metrics = json.loads(res.read_text())["metrics"]
    assert set(metrics) == {"APD", "ADE", "FDE", "MMADE", "MMFDE"}
    assert all(np.isfinite(v) for v in metrics.values())


def test_shipped_defaults_file_parses(tmp_path, clips, toy_ckpt_125):
    from pathlib import Path

    defaults = Path(__file__).resolve().parents[1] / "configs" / "defaults.toml"
    out = tmp_path / "j.json"
    assert main(["complete", "--config", str(defaults), "--h1", str(clips[0]), "--h2", str(clips[1]),
                 "--ckpt", str(toy_ckpt_125), "--out", str(out)]) == 0
    assert load_motion(out).n_frames == 340
    run = tmp_path / "run"
    assert main(["train", "--config", str(defaults), "--synthetic", "4", "--window", "20", "--epochs", "1",
                 "--steps", "10", "--latent-dim", "16", "--n-heads", "2", "--ff-dim", "32", "--out", str(run)]) == 0
    prov = json.loads((run / "config_used.json").read_text())
    assert prov["train"]["lr"] == 3e-4 and prov["model"]["n_time_scales"] == 4
