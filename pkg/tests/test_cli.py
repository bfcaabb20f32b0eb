import csv
import subprocess
import sys

import numpy as np
import pytest

from depthsr.cli import main
from depthsr.data import discover_pairs, load_rgbd, read_depth_png, save_rgbd, write_pairs
from depthsr.imaging import ColorImage, DepthMap, bicubic_resample
from depthsr.data import RgbdPair
from depthsr.network import NetworkConfig, init_parameters, load_checkpoint, save_checkpoint


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out), "--count", "3", "--size", "64", "64", "--seed", "5"]) == 0
    return out


def test_synth_writes_manifest_and_is_deterministic(tmp_path, synth_dir):
    rows = (synth_dir / "manifest.txt").read_text().splitlines()
    assert len(rows) == 3
    again = tmp_path / "again"
    main(["synth", "--out", str(again), "--count", "3", "--size", "64", "64", "--seed", "5"])
    for name in ("synth00005.png", "synth00005_depth.png"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()
    _, c, d = discover_pairs(synth_dir)[0]
    assert load_rgbd(c, d).shape == (64, 64)


def test_synth_validation(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "x"), "--size", "32", "64"]) == 1
    assert "size" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_prepare_counts_and_rot90(tmp_path):
    src = tmp_path / "big"
    rng = np.random.default_rng(0)
    write_pairs([RgbdPair(ColorImage(rng.random((480, 640, 3))), DepthMap(rng.random((480, 640))), "nyu")], src)
    assert main(["prepare", "--in", str(src), "--out", str(tmp_path / "p"), "--patch", "128", "--stride", "32"]) == 0
    assert len(discover_pairs(tmp_path / "p")) == 204
    assert main(["prepare", "--in", str(src), "--out", str(tmp_path / "r"), "--rot90"]) == 0
    assert len(discover_pairs(tmp_path / "r")) == 408


def test_prepare_constant_image(tmp_path):
    src = tmp_path / "flat"
    write_pairs([RgbdPair(ColorImage(np.full((96, 96, 3), 0.5)), DepthMap(np.full((96, 96), 0.25)), "f")], src)
    assert main(["prepare", "--in", str(src), "--out", str(tmp_path / "p"), "--patch", "64", "--stride", "16"]) == 0
    pairs = discover_pairs(tmp_path / "p")
    assert len(pairs) == 9
    for _, c, d in pairs:
        pair = load_rgbd(c, d)
        assert pair.shape == (64, 64)
        assert np.ptp(pair.depth.values) == 0


def test_prepare_rejects_empty_and_small(tmp_path, synth_dir):
    (tmp_path / "empty").mkdir()
    assert main(["prepare", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1
    assert main(["prepare", "--in", str(synth_dir), "--out", str(tmp_path / "o2"), "--patch", "128"]) == 1
    assert not (tmp_path / "o").exists() and not (tmp_path / "o2").exists()


def test_train_eval_infer(tmp_path, synth_dir, capsys):
    ckpt = tmp_path / "m.ckpt"
    log = tmp_path / "log.csv"
    args = ["train", "--data", str(synth_dir), "--scale", "4", "--out", str(ckpt), "--log", str(log),
            "--steps", "3", "--set", "train.batch_size=2", "--set", "train.learning_rate=1e-3"]
    assert main(args) == 0
    first = log.read_text()
    assert len(first.splitlines()) == 4
    assert main(args) == 0
    assert log.read_text().split("\n")[1].split(",")[:3] == first.split("\n")[1].split(",")[:3]
    report = tmp_path / "r.csv"
    dump = tmp_path / "dump"
    assert main(["eval", "--data", str(synth_dir), "--scale", "4", "--method", "mpfn", "--ckpt", str(ckpt),
                 "--report", str(report), "--dump-images", str(dump)]) == 0
    with open(report) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and all(float(r["rmse"]) >= 0 for r in rows)
    assert "RMSE" in capsys.readouterr().out
    assert len(list(dump.glob("*_pred.png"))) == 3 and len(list(dump.glob("*_err.png"))) == 3
    _, color, depth = discover_pairs(synth_dir)[0]
    lr = tmp_path / "lr.png"
    pair = load_rgbd(color, depth)
    small = DepthMap(bicubic_resample(pair.depth.values, 16, 16).clip(0, 1))
    save_rgbd(RgbdPair(ColorImage(np.zeros((16, 16, 3))), small), tmp_path / "junk.png", lr)
    out = tmp_path / "hr.png"
    assert main(["infer", "--ckpt", str(ckpt), "--color", color, "--depth", str(lr),
                 "--scale", "4", "--out", str(out)]) == 0
    assert read_depth_png(out).shape == (64, 64)


def test_eval_baselines_and_zero_loss_on_constants(tmp_path):
    flat = tmp_path / "flat"
    write_pairs([RgbdPair(ColorImage(np.full((64, 64, 3), 0.5)), DepthMap(np.full((64, 64), 0.4)), "f")], flat)
    for method in ("bicubic", "gf"):
        rep = tmp_path / f"{method}.csv"
        assert main(["eval", "--data", str(flat), "--scale", "2", "--method", method, "--report", str(rep)]) == 0
        with open(rep) as fh:
            row = next(csv.DictReader(fh))
        assert float(row["rmse"]) == pytest.approx(0.0, abs=1e-9)


def test_infer_zero_checkpoint_is_bicubic(tmp_path, synth_dir):
    p = init_parameters(NetworkConfig()).zeros_like()
    ckpt = tmp_path / "zero.ckpt"
    save_checkpoint(p, ckpt)
    _, color, _ = discover_pairs(synth_dir)[0]
    rng = np.random.default_rng(2)
    lr_vals = rng.uniform(0.2, 0.8, (32, 32))
    lr = tmp_path / "lr_depth.png"
    save_rgbd(RgbdPair(ColorImage(np.zeros((32, 32, 3))), DepthMap(lr_vals)), tmp_path / "c.png", lr)
    out = tmp_path / "out.png"
    assert main(["infer", "--ckpt", str(ckpt), "--color", color, "--depth", str(lr),
                 "--scale", "2", "--out", str(out)]) == 0
    want = np.clip(bicubic_resample(read_depth_png(lr).values, 64, 64), 0, 1)
    assert np.abs(read_depth_png(out).values - want).max() <= 0.5 / 65535 + 1e-12


def test_infer_rejects_bad_scale(tmp_path, synth_dir):
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(init_parameters(NetworkConfig()), ckpt)
    _, color, depth = discover_pairs(synth_dir)[0]
    out = tmp_path / "o.png"
    assert main(["infer", "--ckpt", str(ckpt), "--color", color, "--depth", depth,
                 "--scale", "3", "--out", str(out)]) == 1
    assert main(["infer", "--ckpt", str(ckpt), "--color", color, "--depth", depth,
                 "--scale", "4", "--out", str(out)]) == 1
    assert not out.exists()


def test_exit_codes_for_bad_inputs(tmp_path, synth_dir):
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[train]\nlearnig_rate = 1\n")
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--data", str(synth_dir), "--scale", "4", "--out", str(ckpt),
                 "--config", str(bad_cfg)]) == 1
    assert not ckpt.exists()
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    assert main(["eval", "--data", str(synth_dir), "--scale", "4", "--ckpt", str(tmp_path / "junk.ckpt"),
                 "--report", str(tmp_path / "r.csv")]) == 1
    assert main(["eval", "--data", str(tmp_path / "nope"), "--scale", "4", "--method", "bicubic",
                 "--report", str(tmp_path / "r.csv")]) == 1


def test_eval_config_mismatch(tmp_path, synth_dir):
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(init_parameters(NetworkConfig()), ckpt)
    cfg = tmp_path / "c.ini"
    cfg.write_text("[network]\ndepth_channels = 6\n")
    assert main(["eval", "--data", str(synth_dir), "--scale", "4", "--ckpt", str(ckpt),
                 "--config", str(cfg), "--report", str(tmp_path / "r.csv")]) == 1


def test_train_non_finite_exit_code(tmp_path, synth_dir):
    args = ["train", "--data", str(synth_dir), "--scale", "4", "--out", str(tmp_path / "m.ckpt"),
            "--steps", "30", "--set", "train.learning_rate=1e30", "--set", "train.batch_size=1"]
    assert main(args) == 2
    assert not (tmp_path / "m.ckpt").exists()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--levels", "2", "--max-entries", "500"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    assert main(["gradcheck", "--levels", "2", "--max-entries", "500", "--corrupt", "recon.out.w"]) == 2
    assert "FAIL" in capsys.readouterr().out
    assert main(["gradcheck", "--levels", "2", "--corrupt", "no.such"]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "depthsr", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout
