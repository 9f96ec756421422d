"""The denoising network.

A shallow 3x3 convolution lifts the noisy cube into feature space; a
stack of layers, each a chain of residual scan blocks wrapped in a skip
connection, refines the features; a final 3x3 convolution predicts a
correction that is added back onto the input (global residual).

Each scan block is LN -> bidirectional selective scan mixer -> residual,
then LN -> 3x3 conv -> channel attention -> residual. The mixer widens
the features by `expand_factor`, runs a short depthwise convolution
along the flattened sequence, scans it under one or two serpentine
orderings with a single shared set of scan parameters, and recombines
the direction branches either gated by a SiLU projection of the input
(`gated-pair`) or through two rounds of layer normalization over the
branch sum (`norm-sum`).

Blocks cycle through the four serpentine families (block index mod 4),
so a four-block layer in bidirectional mode covers all eight scan
directions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .scanpath import build_path, build_sweep_path
from .ssm import SsmParams, selective_scan
from .tensor import Tensor

SCAN_MODES = ("bid-cross", "cross", "bid-sweep", "sweep")
AGGREGATE_MODES = ("gated-pair", "norm-sum")


@dataclass
class ModelConfig:
    bands: int = 31
    hidden_dim: int = 48
    num_layers: int = 3
    blocks_per_layer: int = 4
    state_dim: int = 16
    expand_factor: int = 2
    conv1d_kernel: int = 3
    ca_reduction: int = 4
    scan_mode: str = "bid-cross"
    aggregate_mode: str = "gated-pair"
    gate_enabled: bool = True
    learnable_residual_scale: bool = False
    chunk_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.bands < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ConfigError("bands, hidden_dim and num_layers must be >= 1")
        if self.blocks_per_layer < 1:
            raise ConfigError("blocks_per_layer must be >= 1")
        if self.state_dim < 1 or self.expand_factor < 1:
            raise ConfigError("state_dim and expand_factor must be >= 1")
        if self.hidden_dim % self.ca_reduction != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"ca_reduction {self.ca_reduction}")
        if self.conv1d_kernel < 1 or self.conv1d_kernel % 2 == 0:
            raise ConfigError("conv1d_kernel must be odd and >= 1")
        if self.scan_mode not in SCAN_MODES:
            raise ConfigError(f"scan_mode must be one of {SCAN_MODES}")
        if self.aggregate_mode not in AGGREGATE_MODES:
            raise ConfigError(f"aggregate_mode must be one of {AGGREGATE_MODES}")
        if self.chunk_len < 1:
            raise ConfigError("chunk_len must be >= 1")

    @classmethod
    def desk_profile(cls, bands: int = 8, seed: int = 0) -> "ModelConfig":
        """Small profile sized for CPU-scale experiments."""
        return cls(bands=bands, hidden_dim=16, num_layers=1, blocks_per_layer=2,
                   state_dim=8, seed=seed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        from .cubeio import parse_keyvalue_text
        return parse_keyvalue_text(cls, text)


class LayerNormChannels:
    """Layer norm over the channel axis of [C, L] maps."""

    def __init__(self, width: int, dtype):
        self.gamma = Tensor(np.ones(width), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(width), requires_grad=True, dtype=dtype)

    def __call__(self, x_cl: Tensor) -> Tensor:
        return T.transpose(T.layer_norm(T.transpose(x_cl), self.gamma, self.beta))

    def params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class ChannelAttention:
    """Squeeze-excite gate: per-channel sigmoid weights from pooled features."""

    def __init__(self, width: int, reduction: int, rng, dtype):
        hidden = width // reduction
        b1 = 1.0 / np.sqrt(width)
        b2 = 1.0 / np.sqrt(hidden)
        self.w1 = Tensor(rng.uniform(-b1, b1, (hidden, width)), requires_grad=True, dtype=dtype)
        self.b1 = Tensor(rng.uniform(-b1, b1, hidden), requires_grad=True, dtype=dtype)
        self.w2 = Tensor(rng.uniform(-b2, b2, (width, hidden)), requires_grad=True, dtype=dtype)
        self.b2 = Tensor(rng.uniform(-b2, b2, width), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        width = x.shape[0]
        pooled = T.reshape(T.channel_mean(x), (width, 1))
        z = T.silu(T.add_channel_bias(T.matmul(self.w1, pooled), self.b1))
        w = T.sigmoid(T.add_channel_bias(T.matmul(self.w2, z), self.b2))
        return T.scale_channels(x, T.reshape(w, (width,)))

    def params(self, prefix: str):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


class ScanMixer:
    """Widened bidirectional selective scan with gated or normalized merging.

    All direction branches share one set of scan parameters; only the
    visit order differs. The in/gate/out projections carry no bias (the
    depthwise convolution provides the offset), so zeroing the scan
    readout annihilates the whole branch.
    """

    def __init__(self, cfg: ModelConfig, block_index: int, rng, dtype,
                 directions: tuple[int, ...] | None = None):
        c = cfg.hidden_dim
        d = cfg.expand_factor * c
        self.cfg = cfg
        self.d_inner = d
        family = block_index % 4
        if directions is None:
            if cfg.scan_mode in ("bid-cross", "bid-sweep"):
                directions = (family, family + 4)
            else:
                directions = (family,)
        if len(directions) == 0:
            raise ConfigError("ScanMixer needs at least one scan direction")
        self.directions = tuple(directions)
        self.sweep = cfg.scan_mode in ("bid-sweep", "sweep")
        bc = 1.0 / np.sqrt(c)
        bk = 1.0 / np.sqrt(cfg.conv1d_kernel)
        self.w_in = Tensor(rng.uniform(-bc, bc, (d, c)), requires_grad=True, dtype=dtype)
        self.conv_w = Tensor(rng.uniform(-bk, bk, (d, cfg.conv1d_kernel)),
                             requires_grad=True, dtype=dtype)
        self.conv_b = Tensor(rng.uniform(-bk, bk, d), requires_grad=True, dtype=dtype)
        self.ssm = SsmParams.create(d, cfg.state_dim, rng, dtype=dtype)
        self.w_gate = Tensor(rng.uniform(-bc, bc, (d, c)), requires_grad=True, dtype=dtype)
        self.w_out = Tensor(rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), (c, d)),
                            requires_grad=True, dtype=dtype)
        if cfg.aggregate_mode == "norm-sum":
            self.ln_branch = LayerNormChannels(d, dtype)
            self.ln_agg = LayerNormChannels(d, dtype)
        self._path_cache: dict[tuple[int, int, int], object] = {}

    def _path(self, direction: int, h: int, w: int):
        key = (direction, h, w)
        if key not in self._path_cache:
            builder = build_sweep_path if self.sweep else build_path
            self._path_cache[key] = builder(direction, h, w)
        return self._path_cache[key]

    def scan_branches(self, u: Tensor, h: int, w: int) -> list[Tensor]:
        """Scan u[D, H*W] under each direction, back in row-major order."""
        if u.shape[1] != h * w:
            raise ShapeError(f"scan_branches: {u.shape} vs grid {h}x{w}")
        branches = []
        for direction in self.directions:
            path = self._path(direction, h, w)
            ordered = T.permute_flat(u, path.perm)
            scanned = selective_scan(ordered, self.ssm, self.cfg.chunk_len)
            branches.append(T.permute_flat(scanned, path.inverse))
        return branches

    def forward(self, xn: Tensor, h: int, w: int) -> Tensor:
        u = T.depthwise_conv1d(T.matmul(self.w_in, xn), self.conv_w, self.conv_b)
        branches = self.scan_branches(u, h, w)
        if self.cfg.aggregate_mode == "gated-pair":
            if self.cfg.gate_enabled:
                g = T.silu(T.matmul(self.w_gate, xn))
                merged = T.mul(g, branches[0])
                for br in branches[1:]:
                    merged = T.add(merged, T.mul(g, br))
            else:
                merged = branches[0]
                for br in branches[1:]:
                    merged = T.add(merged, br)
        else:
            merged = self.ln_branch(branches[0])
            for br in branches[1:]:
                merged = T.add(merged, self.ln_branch(br))
            merged = self.ln_agg(merged)
        return T.matmul(self.w_out, merged)

    def params(self, prefix: str):
        rows = [(f"{prefix}.w_in", self.w_in), (f"{prefix}.conv_w", self.conv_w),
                (f"{prefix}.conv_b", self.conv_b)]
        rows += [(f"{prefix}.ssm.{n}", t) for n, t in self.ssm.tensors()]
        rows += [(f"{prefix}.w_gate", self.w_gate), (f"{prefix}.w_out", self.w_out)]
        if self.cfg.aggregate_mode == "norm-sum":
            rows += self.ln_branch.params(f"{prefix}.ln_branch")
            rows += self.ln_agg.params(f"{prefix}.ln_agg")
        return rows


class ScanBlock:
    """LN -> scan mixer -> residual, then LN -> conv -> channel attention -> residual."""

    def __init__(self, cfg: ModelConfig, block_index: int, rng, dtype):
        c = cfg.hidden_dim
        self.cfg = cfg
        self.ln1 = LayerNormChannels(c, dtype)
        self.mixer = ScanMixer(cfg, block_index, rng, dtype)
        self.ln2 = LayerNormChannels(c, dtype)
        bound = 1.0 / np.sqrt(c * 9)
        self.conv_w = Tensor(rng.uniform(-bound, bound, (c, c, 3, 3)),
                             requires_grad=True, dtype=dtype)
        self.conv_b = Tensor(rng.uniform(-bound, bound, c), requires_grad=True, dtype=dtype)
        self.ca = ChannelAttention(c, cfg.ca_reduction, rng, dtype)
        if cfg.learnable_residual_scale:
            self.res1 = Tensor(np.ones(()), requires_grad=True, dtype=dtype)
            self.res2 = Tensor(np.ones(()), requires_grad=True, dtype=dtype)

    def forward(self, f: Tensor) -> Tensor:
        c, h, w = f.shape
        flat = T.reshape(f, (c, h * w))
        mixed = self.mixer.forward(self.ln1(flat), h, w)
        skip = T.smul(flat, self.res1) if self.cfg.learnable_residual_scale else flat
        tmp = T.add(mixed, skip)
        conv_in = T.reshape(self.ln2(tmp), (c, h, w))
        attended = self.ca(T.conv2d_same(conv_in, self.conv_w, self.conv_b))
        tmp_map = T.reshape(tmp, (c, h, w))
        skip2 = T.smul(tmp_map, self.res2) if self.cfg.learnable_residual_scale else tmp_map
        return T.add(attended, skip2)

    def params(self, prefix: str):
        rows = self.ln1.params(f"{prefix}.ln1")
        rows += self.mixer.params(f"{prefix}.mixer")
        rows += self.ln2.params(f"{prefix}.ln2")
        rows += [(f"{prefix}.conv_w", self.conv_w), (f"{prefix}.conv_b", self.conv_b)]
        rows += self.ca.params(f"{prefix}.ca")
        if self.cfg.learnable_residual_scale:
            rows += [(f"{prefix}.res1", self.res1), (f"{prefix}.res2", self.res2)]
        return rows


class DenoiserModel:
    """Full network: shallow conv, residual layer stack, corrective head."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        c, b = cfg.hidden_dim, cfg.bands
        bound = 1.0 / np.sqrt(b * 9)
        self.shallow_w = Tensor(rng.uniform(-bound, bound, (c, b, 3, 3)),
                                requires_grad=True, dtype=dtype)
        self.shallow_b = Tensor(rng.uniform(-bound, bound, c), requires_grad=True, dtype=dtype)
        self.layers: list[list[ScanBlock]] = []
        for i in range(cfg.num_layers):
            blocks = [ScanBlock(cfg, i * cfg.blocks_per_layer + j, rng, dtype)
                      for j in range(cfg.blocks_per_layer)]
            self.layers.append(blocks)
        # zero head: the network starts as the identity map, so early
        # training cannot move the output away from the noisy baseline
        self.head_w = Tensor(np.zeros((b, c, 3, 3)), requires_grad=True, dtype=dtype)
        self.head_b = Tensor(np.zeros(b), requires_grad=True, dtype=dtype)

    def forward(self, y: Tensor) -> Tensor:
        if y.data.ndim != 3 or y.shape[0] != self.cfg.bands:
            raise ShapeError(f"model expects [{self.cfg.bands}, H, W], got {y.shape}")
        f = T.conv2d_same(y, self.shallow_w, self.shallow_b)
        for blocks in self.layers:
            entry = f
            for block in blocks:
                f = block.forward(f)
            f = T.add(f, entry)
        return T.add(y, T.conv2d_same(f, self.head_w, self.head_b))

    def parameters(self) -> list[tuple[str, Tensor]]:
        rows = [("shallow.w", self.shallow_w), ("shallow.b", self.shallow_b)]
        for i, blocks in enumerate(self.layers):
            for j, block in enumerate(blocks):
                rows += block.params(f"layer{i}.block{j}")
        rows += [("head.w", self.head_w), ("head.b", self.head_b)]
        return rows

    def param_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def zero_grads(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise ShapeError(f"checkpoint parameter names do not match: {missing[:4]}")
        for name, arr in state.items():
            if params[name].data.shape != arr.shape:
                raise ShapeError(f"checkpoint shape mismatch for {name}: "
                                 f"{arr.shape} vs {params[name].data.shape}")
            params[name].data = arr.astype(self.dtype)


def denoise_cube(model: DenoiserModel, data: np.ndarray,
                 tile: int | None = None, overlap: int = 8) -> np.ndarray:
    """Run the model over a [B, H, W] cube, tiling large images.

    Tiles overlap by `overlap` pixels and overlapping predictions are
    averaged with uniform weights; accumulation runs in float64 so that
    averaging identical values returns them exactly. Cubes no larger
    than the tile are processed in a single pass.
    """
    if data.ndim != 3:
        raise ShapeError(f"denoise_cube: expected [B, H, W], got {data.shape}")
    if data.shape[0] != model.cfg.bands:
        raise ShapeError(f"denoise_cube: cube has {data.shape[0]} bands, "
                         f"model expects {model.cfg.bands}")
    data = data.astype(np.float32, copy=False)
    _, h, w = data.shape
    if tile is None or (h <= tile and w <= tile):
        return model.forward(Tensor(data)).data
    if overlap < 0 or overlap >= tile:
        raise ConfigError(f"overlap must be in [0, tile), got {overlap}")
    step = tile - overlap
    # clamp at 0 so an axis shorter than the tile still gets one pass
    tops = sorted({min(t, max(0, h - tile)) for t in range(0, h, step) if t < h})
    lefts = sorted({min(l, max(0, w - tile)) for l in range(0, w, step) if l < w})
    acc = np.zeros(data.shape, dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for top in tops:
        for left in lefts:
            patch = data[:, top:top + tile, left:left + tile]
            pred = model.forward(Tensor(np.ascontiguousarray(patch))).data
            acc[:, top:top + tile, left:left + tile] += pred
            cnt[top:top + tile, left:left + tile] += 1.0
    return (acc / cnt[None, :, :]).astype(np.float32)
