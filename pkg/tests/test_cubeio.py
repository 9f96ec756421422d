"""Binary formats and key=value config parsing."""

import numpy as np
import pytest

from hsidenoise.cubeio import (RunConfig, load_checkpoint, parse_keyvalue_text,
                               read_checkpoint_state, read_cube,
                               save_checkpoint, write_cube)
from hsidenoise.errors import ConfigError, DataError
from hsidenoise.model import DenoiserModel, ModelConfig
from hsidenoise.noise import NoiseSpec
from hsidenoise.tensor import Tensor
from hsidenoise.train import TrainConfig


def _tiny_model(seed=0):
    cfg = ModelConfig(bands=3, hidden_dim=8, num_layers=1, blocks_per_layer=2,
                      state_dim=4, chunk_len=16, seed=seed)
    return DenoiserModel(cfg)


def test_cube_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "cube.hsc"
    data = np.random.default_rng(0).uniform(-1, 2, (5, 7, 9)).astype(np.float32)
    write_cube(path, data)
    back = read_cube(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, data)


def test_cube_file_size_arithmetic(tmp_path):
    path = tmp_path / "cube.hsc"
    write_cube(path, np.zeros((8, 32, 32), dtype=np.float32))
    assert path.stat().st_size == 4 + 4 + 12 + 1 + 4 * 8 * 32 * 32


def test_cube_write_rejects_bad_shape(tmp_path):
    with pytest.raises(DataError):
        write_cube(tmp_path / "bad.hsc", np.zeros((4, 4), dtype=np.float32))


def test_cube_read_rejects_corruption(tmp_path):
    path = tmp_path / "cube.hsc"
    data = np.zeros((2, 3, 3), dtype=np.float32)
    write_cube(path, data)
    blob = path.read_bytes()
    (tmp_path / "short.hsc").write_bytes(blob[:-4])
    with pytest.raises(DataError, match="payload"):
        read_cube(tmp_path / "short.hsc")
    (tmp_path / "magic.hsc").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError, match="not a cube"):
        read_cube(tmp_path / "magic.hsc")
    (tmp_path / "ver.hsc").write_bytes(blob[:4] + b"\x09\x00\x00\x00" + blob[8:])
    with pytest.raises(DataError, match="version"):
        read_cube(tmp_path / "ver.hsc")
    (tmp_path / "dt.hsc").write_bytes(blob[:20] + b"\x07" + blob[21:])
    with pytest.raises(DataError, match="dtype"):
        read_cube(tmp_path / "dt.hsc")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "model.hsdm"
    model = _tiny_model(seed=5)
    model.head_w.data[:] = 0.25
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    src, dst = model.state_arrays(), loaded.state_arrays()
    assert set(src) == set(dst)
    for name in src:
        assert np.array_equal(src[name], dst[name]), name
    # a second save of the loaded model produces identical bytes
    save_checkpoint(tmp_path / "again.hsdm", loaded)
    assert (tmp_path / "again.hsdm").read_bytes() == path.read_bytes()
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (3, 6, 6)).astype(np.float32))
    assert np.array_equal(model.forward(x).data, loaded.forward(x).data)


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "model.hsdm"
    save_checkpoint(path, _tiny_model())
    blob = path.read_bytes()
    (tmp_path / "magic.hsdm").write_bytes(b"ZZZZ" + blob[4:])
    with pytest.raises(DataError, match="not a checkpoint"):
        read_checkpoint_state(tmp_path / "magic.hsdm")
    (tmp_path / "trunc.hsdm").write_bytes(blob[:-3])
    with pytest.raises(DataError):
        read_checkpoint_state(tmp_path / "trunc.hsdm")
    (tmp_path / "trail.hsdm").write_bytes(blob + b"\x00")
    with pytest.raises(DataError):
        read_checkpoint_state(tmp_path / "trail.hsdm")


def test_parse_keyvalue_basics():
    text = "# comment\n\ncase=mixture\nsigma_lo=5.5\nseed=11\n"
    spec = parse_keyvalue_text(NoiseSpec, text)
    assert spec.case == "mixture" and spec.sigma_lo == 5.5 and spec.seed == 11
    assert spec.sigma_hi == 70.0    # untouched default


def test_parse_keyvalue_rejects_bad_input():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_keyvalue_text(NoiseSpec, "case=mixture\nwibble=3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_keyvalue_text(NoiseSpec, "case=mixture\ncase=mixture\n")
    with pytest.raises(ConfigError):
        parse_keyvalue_text(NoiseSpec, "case=mixture\nseed=eleven\n")
    with pytest.raises(ConfigError):
        parse_keyvalue_text(NoiseSpec, "sigma_lo=5\n")   # case missing
    with pytest.raises(ConfigError, match="key=value"):
        parse_keyvalue_text(NoiseSpec, "just words\n")
    with pytest.raises(ConfigError):
        parse_keyvalue_text(ModelConfig, "gate_enabled=yes\n")


def test_model_config_bool_roundtrip():
    cfg = ModelConfig(gate_enabled=False, learnable_residual_scale=True)
    back = ModelConfig.from_text(cfg.to_text())
    assert back == cfg


def test_run_config_roundtrip(tmp_path):
    rc = RunConfig(model=ModelConfig.desk_profile(bands=8, seed=3),
                   train=TrainConfig.desk_profile(seed=4),
                   noise=NoiseSpec("mixture", seed=5),
                   seed=6)
    back = RunConfig.from_text(rc.to_text())
    assert back == rc
    path = tmp_path / "run.cfg"
    rc.save(path)
    assert RunConfig.load(path) == rc


def test_run_config_rejects_unknown_keys():
    rc = RunConfig(model=ModelConfig(), train=TrainConfig(),
                   noise=NoiseSpec("mixture"), seed=0)
    text = rc.to_text()
    with pytest.raises(ConfigError):
        RunConfig.from_text(text + "bench.reps=5\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text(text + "model.wibble=1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text(text + "loose_key=1\n")
