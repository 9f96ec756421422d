"""File formats: cubes, checkpoints, and key=value run configs.

Cube files ("HSC1") hold one [B, H, W] float32 array, band-major,
little-endian, with the exact payload length enforced on read.

Checkpoint files ("HSDM") hold the model config as a key=value text
block followed by every parameter (name, shape, float32 data) in the
model's canonical parameter order. Save/load round trips are bit-exact.

Run configs are plain text: one key=value per line, '#' comments,
sections selected by a dotted prefix (model., train., noise.) plus a
top-level seed. Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError
from .model import DenoiserModel, ModelConfig

CUBE_MAGIC = b"HSC1"
CHECKPOINT_MAGIC = b"HSDM"
FORMAT_VERSION = 1
_DTYPE_F32 = 0


def parse_keyvalue_text(cls, text: str):
    """Build a dataclass from key=value lines, coercing by field type."""
    spec = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in spec:
            raise ConfigError(f"line {ln}: unknown key {key!r} for {cls.__name__}")
        if key in kwargs:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        kwargs[key] = _coerce(spec[key], key, value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def format_keyvalue_text(obj) -> str:
    """Serialize a flat dataclass as key=value lines (round-trips exactly)."""
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(item) for item in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def _coerce(ftype, key: str, value: str):
    # dataclass field types arrive as strings under `from __future__ import
    # annotations`, so dispatch on the name
    name = ftype if isinstance(ftype, str) else ftype.__name__
    try:
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
        if name == "bool":
            if value not in ("true", "false"):
                raise ValueError("expected true or false")
            return value == "true"
        if name == "tuple" or name.startswith("tuple["):
            # integer tuples only (bench length sweeps, window extents)
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from None


def write_cube(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise DataError(f"cube must be [B, H, W], got shape {data.shape}")
    b, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<IIIIB", FORMAT_VERSION, b, h, w, _DTYPE_F32))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_cube(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 21 or blob[:4] != CUBE_MAGIC:
        raise DataError(f"{path}: not a cube file")
    version, b, h, w, dtype_code = struct.unpack("<IIIIB", blob[4:21])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported cube version {version}")
    if dtype_code != _DTYPE_F32:
        raise DataError(f"{path}: unsupported dtype code {dtype_code}")
    expected = 4 * b * h * w
    payload = blob[21:]
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, "
                        f"expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(b, h, w).copy()


def save_checkpoint(path, model: DenoiserModel) -> None:
    config_blob = model.cfg.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for name, param in model.parameters():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(param.data, dtype="<f4")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> DenoiserModel:
    cfg, state = read_checkpoint_state(path)
    model = DenoiserModel(cfg)
    model.load_state_arrays(state)
    return model


def read_checkpoint_state(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, config_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    view = memoryview(blob)
    pos = 12
    try:
        cfg = ModelConfig.from_text(bytes(view[pos:pos + config_len]).decode("utf-8"))
        pos += config_len
        state: dict[str, np.ndarray] = {}
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(view, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            state[name] = arr.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return cfg, state


@dataclass
class RunConfig:
    """One file describing a full run: model, trainer, noise, master seed."""

    model: "ModelConfig"
    train: "TrainConfig"
    noise: "NoiseSpec"
    seed: int = 0

    def to_text(self) -> str:
        lines = [f"seed={self.seed}"]
        for prefix, section in (("model", self.model), ("train", self.train),
                                ("noise", self.noise)):
            for line in format_keyvalue_text(section).strip().splitlines():
                lines.append(f"{prefix}.{line}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        from .noise import NoiseSpec
        from .train import TrainConfig

        groups: dict[str, list[str]] = {"model": [], "train": [], "noise": []}
        seed = 0
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "seed":
                seed = _coerce("int", key, value)
                continue
            prefix, _, rest = key.partition(".")
            if prefix not in groups or not rest:
                raise ConfigError(f"line {ln}: unknown key {key!r}")
            groups[prefix].append(f"{rest}={value}")
        model = parse_keyvalue_text(ModelConfig, "\n".join(groups["model"]))
        train = parse_keyvalue_text(TrainConfig, "\n".join(groups["train"]))
        noise = parse_keyvalue_text(NoiseSpec, "\n".join(groups["noise"]))
        return cls(model=model, train=train, noise=noise, seed=seed)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
