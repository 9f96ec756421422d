"""End-to-end tests for the command-line surface: every subcommand,
exit codes, provenance sidecars, and figure emission."""

import numpy as np
import pytest

from hsidenoise.cli import main
from hsidenoise.cubeio import read_cube, save_checkpoint, write_cube
from hsidenoise.model import DenoiserModel, ModelConfig
from hsidenoise.tensor import Tensor
from hsidenoise.train import overfit_pair
from hsidenoise.noise import NoiseSpec, corrupt, generate_synthetic_clean


def run(*args) -> int:
    return main([str(a) for a in args])


def gen_args(out, bands=8, size=32, rank=3, seed=7):
    return ("gen", "--bands", bands, "--height", size, "--width", size,
            "--rank", rank, "--seed", seed, "--out", out)


TINY = ModelConfig(bands=4, hidden_dim=8, num_layers=1, blocks_per_layer=2,
                   state_dim=4, ca_reduction=4, chunk_len=16, seed=3)

RUN_CONFIG = """
seed=5
model.bands=4
model.hidden_dim=8
model.num_layers=1
model.blocks_per_layer=2
model.state_dim=4
model.ca_reduction=4
train.lr_init=0.002
train.epochs=1
train.steps_per_epoch=4
train.batch_size=2
train.patch_size=16
train.seed=5
noise.case=mixture
"""


def test_usage_errors_exit_1():
    assert run() == 1
    assert run("gen", "--bands", 8) == 1
    assert run("nonsense") == 1


def test_gen_writes_cube_and_sidecar(tmp_path):
    out = tmp_path / "clean.hsc"
    assert run(*gen_args(out)) == 0
    # 4 magic + 4 version + 12 dims + 1 dtype + payload
    assert out.stat().st_size == 21 + 4 * 8 * 32 * 32
    cube = read_cube(out)
    assert cube.shape == (8, 32, 32)
    assert cube.min() >= 0.0 and cube.max() <= 1.0
    sidecar = (tmp_path / "clean.config.txt").read_text()
    assert "command=gen" in sidecar
    assert "seed=7" in sidecar


def test_gen_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a.hsc", tmp_path / "b.hsc"
    assert run(*gen_args(a)) == 0
    assert run(*gen_args(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_constant_spectrum_is_flat(tmp_path):
    out = tmp_path / "flat.hsc"
    assert run(*gen_args(out, rank=1), "--constant-spectrum") == 0
    cube = read_cube(out)
    for band in cube:
        assert np.ptp(band) == 0.0


def test_gen_invalid_rank_exit_1(tmp_path):
    assert run(*gen_args(tmp_path / "x.hsc", rank=0)) == 1


def test_corrupt_roundtrip_and_determinism(tmp_path):
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean)) == 0
    a, b = tmp_path / "a.hsc", tmp_path / "b.hsc"
    assert run("corrupt", "--in", clean, "--case", "gauss_stripe",
               "--seed", 3, "--out", a) == 0
    assert run("corrupt", "--in", clean, "--case", "gauss_stripe",
               "--seed", 3, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    noisy = read_cube(a)
    assert noisy.shape == (8, 32, 32)
    assert not np.array_equal(noisy, read_cube(clean))
    sidecar = (tmp_path / "a.config.txt").read_text()
    assert "noise.case=gauss_stripe" in sidecar


def test_corrupt_rejects_out_of_range_cube(tmp_path):
    bad = tmp_path / "bad.hsc"
    write_cube(bad, np.full((2, 8, 8), 2.0, dtype=np.float32))
    assert run("corrupt", "--in", bad, "--case", "mixture",
               "--seed", 1, "--out", tmp_path / "o.hsc") == 2


def test_corrupt_unknown_case_exit_1(tmp_path):
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean)) == 0
    assert run("corrupt", "--in", clean, "--case", "bogus",
               "--seed", 1, "--out", tmp_path / "o.hsc") == 1


def test_eval_identity_metrics(tmp_path, capsys):
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean)) == 0
    out = tmp_path / "report.csv"
    assert run("eval", "--clean", clean, "--test", clean,
               "--out", out, "--no-plot") == 0
    printed = capsys.readouterr().out
    assert "psnr_db=100.0000" in printed
    header, values = out.read_text().strip().splitlines()
    assert header == "psnr_db,ssim,sam_rad"
    assert values == "100,1,0"
    bands = (tmp_path / "report_bands.csv").read_text().strip().splitlines()
    assert bands[0] == "band,psnr_db,ssim"
    assert len(bands) == 1 + 8
    assert not (tmp_path / "report.png").exists()


def test_eval_renders_figure_by_default(tmp_path):
    clean = tmp_path / "clean.hsc"
    noisy = tmp_path / "noisy.hsc"
    assert run(*gen_args(clean)) == 0
    assert run("corrupt", "--in", clean, "--case", "mixture",
               "--seed", 2, "--out", noisy) == 0
    assert run("eval", "--clean", clean, "--test", noisy,
               "--out", tmp_path / "r.csv") == 0
    assert (tmp_path / "r.png").stat().st_size > 0


def test_eval_missing_file_exit_2(tmp_path):
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean)) == 0
    assert run("eval", "--clean", tmp_path / "nope.hsc", "--test", clean) == 2


def test_eval_malformed_cube_exit_2(tmp_path):
    junk = tmp_path / "junk.hsc"
    junk.write_bytes(b"not a cube at all")
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean)) == 0
    assert run("eval", "--clean", clean, "--test", junk) == 2


def test_denoise_zero_head_identity_through_tiling(tmp_path):
    ckpt = tmp_path / "model.hsdm"
    save_checkpoint(ckpt, DenoiserModel(TINY))    # fresh model: zero head
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean, bands=4, size=48)) == 0
    out = tmp_path / "out.hsc"
    assert run("denoise", "--model", ckpt, "--in", clean, "--out", out,
               "--tile", 16, "--overlap", 8) == 0
    assert np.array_equal(read_cube(out), read_cube(clean))
    assert "tile=16" in (tmp_path / "out.config.txt").read_text()


def test_denoise_single_pass_matches_forward(tmp_path):
    model = DenoiserModel(TINY)
    cube = generate_synthetic_clean(4, 32, 32, 3, seed=11)
    noisy = corrupt(cube, NoiseSpec("noniid_gauss", seed=2))
    overfit_pair(model, noisy, cube, steps=6, lr=2e-3)
    ckpt = tmp_path / "model.hsdm"
    save_checkpoint(ckpt, model)
    src = tmp_path / "noisy.hsc"
    write_cube(src, noisy)
    out = tmp_path / "out.hsc"
    assert run("denoise", "--model", ckpt, "--in", src, "--out", out,
               "--tile", 0) == 0
    expect = model.forward(Tensor(noisy)).data
    assert np.array_equal(read_cube(out), expect)


def test_denoise_band_mismatch_exit_2(tmp_path):
    ckpt = tmp_path / "model.hsdm"
    save_checkpoint(ckpt, DenoiserModel(TINY))
    clean = tmp_path / "clean.hsc"
    assert run(*gen_args(clean, bands=8)) == 0
    assert run("denoise", "--model", ckpt, "--in", clean,
               "--out", tmp_path / "o.hsc") == 2


def test_train_outputs_and_determinism(tmp_path):
    cfg = tmp_path / "run.txt"
    cfg.write_text(RUN_CONFIG)
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--config", cfg, "--out", dir_a,
               "--cubes", 4, "--size", 32, "--quiet") == 0
    assert run("train", "--config", cfg, "--out", dir_b,
               "--cubes", 4, "--size", 32, "--quiet", "--no-plot") == 0
    for name in ("epoch000.hsdm", "final.hsdm", "train_log.csv",
                 "run.config.txt"):
        assert (dir_a / name).exists()
    assert (dir_a / "training_curves.png").stat().st_size > 0
    assert not (dir_b / "training_curves.png").exists()
    assert (dir_a / "final.hsdm").read_bytes() == (dir_b / "final.hsdm").read_bytes()
    assert (dir_a / "train_log.csv").read_bytes() == (dir_b / "train_log.csv").read_bytes()
    log = (dir_a / "train_log.csv").read_text().strip().splitlines()
    assert log[0] == "epoch,step,loss,lr,val_psnr"
    assert len(log) == 2


def test_train_from_data_dir(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for i in range(3):
        write_cube(data / f"c{i}.hsc",
                   generate_synthetic_clean(4, 32, 32, 2, seed=i))
    cfg = tmp_path / "run.txt"
    cfg.write_text(RUN_CONFIG)
    assert run("train", "--config", cfg, "--out", tmp_path / "r",
               "--data", data, "--quiet", "--no-plot") == 0
    assert (tmp_path / "r" / "final.hsdm").exists()


def test_train_empty_data_dir_exit_2(tmp_path):
    data = tmp_path / "empty"
    data.mkdir()
    cfg = tmp_path / "run.txt"
    cfg.write_text(RUN_CONFIG)
    assert run("train", "--config", cfg, "--out", tmp_path / "r",
               "--data", data) == 2


def test_train_unknown_config_key_exit_1(tmp_path):
    cfg = tmp_path / "run.txt"
    cfg.write_text(RUN_CONFIG + "model.bogus=1\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "r") == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_3(tmp_path):
    cfg = tmp_path / "run.txt"
    cfg.write_text(RUN_CONFIG.replace("train.lr_init=0.002",
                                      "train.lr_init=1e30"))
    assert run("train", "--config", cfg, "--out", tmp_path / "r",
               "--cubes", 2, "--size", 32, "--quiet", "--no-plot") == 3


def test_bench_outputs(tmp_path):
    cfg = tmp_path / "bench.txt"
    cfg.write_text("lengths=64,128,256,1024\nchannels=4\nrepetitions=5\n"
                   "warmup=1\nstate_dim=4\n")
    out = tmp_path / "bench"
    assert run("bench", "--config", cfg, "--out", out, "--no-plot") == 0
    lines = (out / "bench.csv").read_text().strip().splitlines()
    assert lines[0] == "kernel,L,median_s,p10_s,p90_s,reliable"
    for kernel in ("conv", "self_attn", "cross_attn", "hsdm_scan"):
        assert sum(1 for ln in lines if ln.startswith(kernel + ",")) >= 4
    assert (out / "bench.config.txt").exists()
    assert not (out / "bench_times.png").exists()


def test_bench_figure_by_default(tmp_path):
    cfg = tmp_path / "bench.txt"
    cfg.write_text("lengths=64,128,256,1024\nchannels=4\nrepetitions=5\n"
                   "warmup=1\nstate_dim=4\n")
    out = tmp_path / "bench"
    assert run("bench", "--config", cfg, "--out", out) == 0
    assert (out / "bench_times.png").stat().st_size > 0


def test_bench_unknown_key_exit_1(tmp_path):
    cfg = tmp_path / "bench.txt"
    cfg.write_text("lengths=64,128,256,1024\nwat=1\n")
    assert run("bench", "--config", cfg) == 1
