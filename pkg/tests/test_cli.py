"""CLI surface: each subcommand drives its stage and reports honestly."""

import numpy as np
import pytest

from hybridinv.cli import main
from hybridinv.pipeline import RunConfig, serialize_config
from hybridinv.editing import save_direction, synthetic_direction
from hybridinv.storage import load_mask, save_image
from hybridinv.toydata import noise_patch_instance, reachable_image


@pytest.fixture
def ckpt(small, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli-ckpt") / "gen.npz"
    small.save(path)
    return str(path)


@pytest.fixture
def target_png(small, tmp_path):
    inst = noise_patch_instance(small, seed=1)
    path = tmp_path / "target.png"
    save_image(path, inst.target)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_embed_writes_latent(capsys, ckpt, target_png, tmp_path):
    out = tmp_path / "latent.npz"
    code, stdout, _ = run(capsys, "embed", "--image", target_png,
                          "--out", str(out), "--generator", ckpt,
                          "--coarse-steps", "4")
    assert code == 0
    assert out.exists()
    assert "wrote" in stdout and "Wplus" in stdout


def test_segment_writes_mask_and_flag_overrides_config(capsys, ckpt,
                                                       target_png, tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(serialize_config(
        RunConfig(generator=ckpt, steps_coarse=4, k_target=4)))
    out = tmp_path / "mask.png"

    code, stdout, _ = run(capsys, "segment", "--image", target_png,
                          "--out", str(out), "--config", str(cfg_file))
    assert code == 0
    low = int(stdout.split(" partitions")[0].rsplit(" ", 1)[-1])

    code, stdout, _ = run(capsys, "segment", "--image", target_png,
                          "--out", str(out), "--config", str(cfg_file),
                          "--k", "16")
    assert code == 0
    high = int(stdout.split(" partitions")[0].rsplit(" ", 1)[-1])
    assert high > low
    mask = load_mask(out)
    assert set(np.unique(mask)) <= {0, 1}


def test_refine_consumes_embed_and_segment_outputs(capsys, ckpt, target_png,
                                                   tmp_path):
    latent, mask = tmp_path / "latent.npz", tmp_path / "mask.png"
    run(capsys, "embed", "--image", target_png, "--out", str(latent),
        "--generator", ckpt, "--coarse-steps", "4")
    run(capsys, "segment", "--image", target_png, "--out", str(mask),
        "--generator", ckpt, "--coarse-steps", "4")
    out_dir = tmp_path / "refined"
    code, stdout, _ = run(capsys, "refine", "--image", target_png,
                          "--latent", str(latent), "--mask", str(mask),
                          "--out-dir", str(out_dir), "--generator", ckpt,
                          "--steps-f", "4", "--steps-w", "2")
    assert code == 0
    assert "L_in=" in stdout and "L_out=" in stdout
    for name in ("refined.png", "mask_feat.png", "delta.npz", "feature.npz",
                 "history.txt"):
        assert (out_dir / name).exists(), name


def test_invert_single_image_bundle(capsys, ckpt, target_png, tmp_path):
    out = tmp_path / "bundle"
    code, stdout, _ = run(capsys, "invert", "--image", target_png,
                          "--out", str(out), "--generator", ckpt,
                          "--coarse-steps", "4", "--steps-f", "4",
                          "--steps-w", "2", "--no-cache")
    assert code == 0
    assert "mse=" in stdout and "psnr=" in stdout
    assert (out / "refined.png").exists()


def test_invert_requires_one_input_mode(capsys, ckpt, target_png, tmp_path):
    code, _, stderr = run(capsys, "invert", "--image", target_png,
                          "--image-dir", str(tmp_path), "--out",
                          str(tmp_path / "x"), "--generator", ckpt)
    assert code == 2
    assert "exactly one" in stderr


def test_invert_batch_prints_summary(capsys, small, ckpt, tmp_path):
    images = tmp_path / "imgs"
    images.mkdir()
    for seed in (1, 2):
        save_image(images / f"im{seed}.png",
                   noise_patch_instance(small, seed=seed).target)
    code, stdout, _ = run(capsys, "invert", "--image-dir", str(images),
                          "--out", str(tmp_path / "runs"), "--generator", ckpt,
                          "--coarse-steps", "4", "--steps-f", "4",
                          "--steps-w", "2", "--no-cache")
    assert code == 0
    assert "mean " in stdout and "summary" in stdout


def test_edit_renders_from_bundle(capsys, small, ckpt, target_png, tmp_path):
    out = tmp_path / "bundle"
    run(capsys, "invert", "--image", target_png, "--out", str(out),
        "--generator", ckpt, "--coarse-steps", "4", "--steps-f", "4",
        "--steps-w", "2", "--no-cache")
    dpath = tmp_path / "dir.npz"
    save_direction(dpath, synthetic_direction(small, "smile", seed=3))
    code, stdout, _ = run(capsys, "edit", "--bundle", str(out),
                          "--direction", str(dpath), "--alpha", "2.0")
    assert code == 0
    assert (out / "edit_smile_+2.png").exists()


def test_eval_scores_paired_dirs(capsys, small, tmp_path):
    pred, target = tmp_path / "pred", tmp_path / "target"
    pred.mkdir(), target.mkdir()
    for seed in (1, 2):
        img, _ = reachable_image(small, seed)
        save_image(target / f"s{seed}.png", img)
        save_image(pred / f"s{seed}.png", img + 0.01)
    code, stdout, _ = run(capsys, "eval", "--pred-dir", str(pred),
                          "--target-dir", str(target))
    assert code == 0
    lines = stdout.strip().splitlines()
    assert len(lines) == 3
    assert lines[-1].startswith("aggregate count=2")


def test_bench_prints_table_and_writes_artifacts(capsys, ckpt, tmp_path):
    out_dir = tmp_path / "bench"
    code, stdout, _ = run(capsys, "bench", "--budgets", "1,2",
                          "--instances", "1", "--generator", ckpt,
                          "--out-dir", str(out_dir))
    assert code == 0
    assert stdout.splitlines()[0].split() == [
        "steps", "time_s", "psnr_db", "mse", "failures"]
    assert (out_dir / "bench.txt").exists()
    assert (out_dir / "bench.png").exists()


def test_selfcheck_passes_on_toy(capsys, ckpt):
    code, stdout, _ = run(capsys, "selfcheck", "--generator", ckpt)
    assert code == 0
    assert "selfcheck passed" in stdout


def test_missing_image_is_reported_not_raised(capsys, ckpt, tmp_path):
    code, _, stderr = run(capsys, "embed", "--image",
                          str(tmp_path / "nope.png"),
                          "--out", str(tmp_path / "latent.npz"),
                          "--generator", ckpt)
    assert code == 2
    assert "error:" in stderr
