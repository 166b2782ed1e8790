import csv
import hashlib

import numpy as np
import pytest

from nestsr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from nestsr.files import read_fgrd, read_image, write_fgrd
from nestsr.training import TrainState, save_checkpoint
from nestsr.unetpp import UNetPPConfig, UNetPPModel

SMALL_RUN = """\
seed = 5
phantom_count = 8
phantom_size = 32
levels = 2
channels = 4,8
steps = {steps}
val_every = {val_every}
"""


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_phantom_writes_fgrd_and_preview(tmp_path):
    out = tmp_path / "p"
    assert main(["phantom", "--count", "1", "--seed", "7", "--size", "64", "--out", str(out)]) == EXIT_OK
    files = sorted(out.iterdir())
    assert [f.name for f in files] == ["phantom_0000.fgrd", "phantom_0000.png"]
    first = {f.name: digest(f) for f in files}
    assert main(["phantom", "--count", "1", "--seed", "7", "--size", "64", "--out", str(out)]) == EXIT_OK
    assert {f.name: digest(f) for f in out.iterdir()} == first


def test_phantom_count_zero(tmp_path):
    assert main(["phantom", "--count", "0", "--out", str(tmp_path / "none")]) == EXIT_OK
    assert list((tmp_path / "none").iterdir()) == []


def test_degrade_default_dims_and_exact_triples(tmp_path, capsys):
    src = tmp_path / "src"
    assert main(["phantom", "--count", "2", "--seed", "1", "--out", str(src)]) == EXIT_OK
    out = tmp_path / "pairs"
    assert main(["degrade", str(src), "--out", str(out)]) == EXIT_OK
    assert "intermediate 172x52 -> output 256x256" in capsys.readouterr().err
    for k in range(2):
        hf, lf, res = (read_fgrd(out / f"phantom_{k:04d}.{r}.fgrd") for r in ("hf", "lf", "res"))
        assert lf.shape == (256, 256)
        np.testing.assert_array_equal(lf + res, hf)
    rows = list(csv.DictReader((out / "manifest.csv").open()))
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert (rows[0]["intermediate_width"], rows[0]["intermediate_height"]) == ("172", "52")


def test_degrade_constant_image_gives_zero_residual(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    write_fgrd(src / "flat.fgrd", np.full((32, 32), 0.4, np.float32))
    assert main(["degrade", str(src), "--size", "32x32", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert not read_fgrd(tmp_path / "o" / "flat.res.fgrd").any()


def test_degrade_all_wrong_dims_fails(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    write_fgrd(src / "a.fgrd", np.random.default_rng(0).uniform(size=(16, 16)).astype(np.float32))
    assert main(["degrade", str(src), "--out", str(tmp_path / "o")]) == EXIT_DATA
    rows = list(csv.DictReader((tmp_path / "o" / "manifest.csv").open()))
    assert rows[0]["status"] == "error" and "expected 256x256" in rows[0]["message"]


def test_eval_same_directory_is_perfect(tmp_path, capsys):
    src = tmp_path / "src"
    main(["phantom", "--count", "2", "--size", "32", "--out", str(src)])
    capsys.readouterr()
    assert main(["eval", str(src), str(src), "--out", str(tmp_path / "rep")]) == EXIT_OK
    text = (tmp_path / "rep" / "report.csv").read_text()
    assert "pred,2,inf,0.000000,1.000000,0.000000" in text
    assert (tmp_path / "rep" / "report.png").exists()


def test_eval_constant_offset_matches_metric_oracle(tmp_path):
    from .oracles import psnr_ref, ssim_ref

    rng = np.random.default_rng(3)
    gt_dir, pred_dir = tmp_path / "gt", tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    gt = rng.uniform(size=(16, 16)).astype(np.float32)
    pred = (gt + np.float32(0.05)).astype(np.float32)
    write_fgrd(gt_dir / "a.hf.fgrd", gt)
    write_fgrd(pred_dir / "a.sr.fgrd", pred)
    assert main(["eval", str(pred_dir), str(gt_dir), "--peak", "1", "--out", str(tmp_path / "r")]) == EXIT_OK
    line = (tmp_path / "r" / "report.csv").read_text().splitlines()[1].split(",")
    p64, g64 = pred.astype(np.float64), gt.astype(np.float64)
    assert float(line[2]) == pytest.approx(psnr_ref(p64, g64, 1.0), abs=1e-6)
    assert float(line[4]) == pytest.approx(ssim_ref(p64, g64), abs=1e-6)


def test_eval_empty_intersection(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    write_fgrd(a / "x.fgrd", np.ones((8, 8), np.float32))
    write_fgrd(b / "y.fgrd", np.ones((8, 8), np.float32))
    assert main(["eval", str(a), str(b), "--out", str(tmp_path / "r")]) == EXIT_DATA


def test_eval_unmatched_file_is_reported(tmp_path, capsys):
    src = tmp_path / "src"
    main(["phantom", "--count", "2", "--size", "32", "--out", str(src)])
    other = tmp_path / "other"
    other.mkdir()
    (other / "phantom_0000.fgrd").write_bytes((src / "phantom_0000.fgrd").read_bytes())
    assert main(["eval", str(other), str(src), "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert "unmatched: phantom_0001" in capsys.readouterr().err


def zero_head_checkpoint(path, levels=3):
    model = UNetPPModel.init(UNetPPConfig(levels=levels, channels=tuple(4 * 2**k for k in range(levels))), seed=0)
    model.zero_head()
    save_checkpoint(model, TrainState(), path)
    return path


def test_infer_zero_head_returns_input(tmp_path, rng):
    ckpt = zero_head_checkpoint(tmp_path / "z.nusr")
    img = rng.uniform(10, 200, size=(32, 32)).astype(np.float32)
    write_fgrd(tmp_path / "in.fgrd", img)
    assert main(["infer", str(ckpt), str(tmp_path / "in.fgrd"), str(tmp_path / "out.fgrd")]) == EXIT_OK
    out = read_fgrd(tmp_path / "out.fgrd")
    assert np.abs(out - img).max() <= 1e-6 * (img.max() - img.min())


def test_infer_output_file_matches_in_memory_result(tmp_path, rng):
    from nestsr.degrade import denormalize, normalize
    from nestsr.training import load_checkpoint
    from nestsr.unetpp import super_resolve

    model = UNetPPModel.init(UNetPPConfig(levels=2, channels=(4, 8)), seed=3)
    save_checkpoint(model, TrainState(), tmp_path / "m.nusr")
    write_fgrd(tmp_path / "in.fgrd", rng.uniform(size=(16, 16)).astype(np.float32))
    assert main(["infer", str(tmp_path / "m.nusr"), str(tmp_path / "in.fgrd"), str(tmp_path / "o.fgrd")]) == EXIT_OK
    loaded, _, _ = load_checkpoint(tmp_path / "m.nusr")
    norm, params = normalize(read_image(tmp_path / "in.fgrd"), *loaded.normalize_range)
    expect = denormalize(super_resolve(loaded, norm), params).data[0, 0].astype(np.float32)
    assert read_fgrd(tmp_path / "o.fgrd").tobytes() == expect.tobytes()


def test_infer_indivisible_input_names_divisor(tmp_path, capsys):
    ckpt = zero_head_checkpoint(tmp_path / "z.nusr")
    write_fgrd(tmp_path / "in.fgrd", np.random.default_rng(0).uniform(size=(30, 30)).astype(np.float32))
    assert main(["infer", str(ckpt), str(tmp_path / "in.fgrd"), str(tmp_path / "o.fgrd")]) == EXIT_DATA
    assert "divisible by 4" in capsys.readouterr().err


def test_infer_bad_checkpoint(tmp_path):
    (tmp_path / "bad.nusr").write_bytes(b"garbage")
    write_fgrd(tmp_path / "in.fgrd", np.ones((8, 8), np.float32))
    assert main(["infer", str(tmp_path / "bad.nusr"), str(tmp_path / "in.fgrd"), str(tmp_path / "o.fgrd")]) == EXIT_DATA


def test_train_zero_steps(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN.format(steps=0, val_every=0))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "train_log.csv").read_text() == "step,loss,lr\n"
    assert (out / "final.nusr").exists()
    for name in ("report.csv", "per_image.csv", "training.png", "report.png", "comparison.png"):
        assert (out / name).exists(), name
    header, *rows = (out / "report.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows] == ["LF baseline", "SR U-Net++"]


def test_train_replay_gives_identical_checkpoint(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN.format(steps=6, val_every=3))
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert digest(tmp_path / "a" / "final.nusr") == digest(tmp_path / "b" / "final.nusr")
    assert (tmp_path / "a" / "report.csv").read_text() == (tmp_path / "b" / "report.csv").read_text()


def test_train_bad_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("steps = 1\nbogus = 2\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["phantom"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
