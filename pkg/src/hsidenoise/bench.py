"""Timing harness for the complexity claims.

Four kernels are timed over a sweep of sequence lengths L = H*W and a
log-log slope is fitted per kernel:

  conv        3x3 convolution via im2col + GEMM      (expected ~linear)
  self_attn   global softmax attention, blockwise    (expected ~quadratic)
  cross_attn  attention inside h*w windows           (expected ~linear)
  hsdm_scan   T serpentine selective scans           (expected ~linear)

All kernels do real array work on random data; nothing is simulated.
Timings are wall-clock medians over repetitions after warmup, taken
single-threaded by default so the fit reflects algorithmic scaling
rather than thread-pool behavior. Points whose median does not exceed
100x the timer resolution are marked unreliable and excluded from the
fit, as are self-attention points whose score block would not fit the
memory budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .scanpath import build_path
from .ssm import SsmParams, selective_scan_chunked

try:
    from threadpoolctl import threadpool_limits
except ImportError:          # pragma: no cover - dependency is declared
    threadpool_limits = None

KERNELS = ("conv", "self_attn", "cross_attn", "hsdm_scan")


@dataclass
class BenchConfig:
    lengths: tuple = (1024, 4096, 16384, 65536)
    channels: int = 16
    window: tuple = (8, 8)
    repetitions: int = 5
    warmup: int = 2
    directions: int = 2
    state_dim: int = 8
    chunk_len: int = 64
    memory_budget_mb: int = 512
    pin_threads: bool = True
    seed: int = 0

    def __post_init__(self):
        lengths = tuple(int(v) for v in self.lengths)
        if len(set(lengths)) < 4:
            raise ConfigError("need at least 4 distinct sequence lengths")
        if max(lengths) < 16 * min(lengths):
            raise ConfigError("length sweep must span at least a 16x range")
        if any(v < 4 for v in lengths):
            raise ConfigError("sequence lengths must be >= 4")
        if self.repetitions < 5:
            raise ConfigError("repetitions must be >= 5")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if self.channels < 1 or self.state_dim < 1 or self.directions < 1:
            raise ConfigError("channels, state_dim and directions must be >= 1")
        h, w = self.window
        if h < 1 or w < 1:
            raise ConfigError("window extents must be >= 1")
        self.lengths = tuple(sorted(set(lengths)))


@dataclass
class BenchRow:
    kernel: str
    length: int
    median_s: float
    p10_s: float
    p90_s: float
    reliable: bool
    note: str = ""


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)   # kernel -> (slope, residual, n)

    def rows_for(self, kernel: str):
        return [r for r in self.rows if r.kernel == kernel]

    def to_csv(self) -> str:
        lines = ["kernel,L,median_s,p10_s,p90_s,reliable"]
        for r in self.rows:
            lines.append(f"{r.kernel},{r.length},{r.median_s:.6g},"
                         f"{r.p10_s:.6g},{r.p90_s:.6g},"
                         f"{'yes' if r.reliable else 'no'}")
        lines.append("")
        lines.append("kernel,slope,residual,points")
        for kernel, (slope, resid, n) in sorted(self.slopes.items()):
            lines.append(f"{kernel},{slope:.4f},{resid:.4f},{n}")
        return "\n".join(lines) + "\n"


def _grid_for(length: int):
    """Factor L into the squarest H x W grid."""
    h = int(math.isqrt(length))
    while length % h != 0:
        h -= 1
    return h, length // h


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def make_conv_kernel(length: int, channels: int, rng):
    h, w = _grid_for(length)
    x = rng.standard_normal((channels, h, w)).astype(np.float32)
    weight = rng.standard_normal((channels, channels * 9)).astype(np.float32)
    weight *= 1.0 / np.sqrt(channels * 9.0)

    def run():
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        cols = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
        cols = np.ascontiguousarray(cols.transpose(0, 3, 4, 1, 2))
        return weight @ cols.reshape(channels * 9, h * w)

    return run


def make_self_attn_kernel(length: int, channels: int, rng,
                          budget_bytes: int):
    # score block of R rows costs R*L floats; pick R to fit the budget
    block = min(length, max(1, budget_bytes // (4 * length)))
    if block < 1 or 4 * length > budget_bytes:
        return None
    q = rng.standard_normal((length, channels)).astype(np.float32)
    k = rng.standard_normal((length, channels)).astype(np.float32)
    v = rng.standard_normal((length, channels)).astype(np.float32)
    scale = np.float32(1.0 / np.sqrt(channels))

    def run():
        out = np.empty_like(q)
        kt = k.T
        for start in range(0, length, block):
            stop = min(start + block, length)
            scores = (q[start:stop] @ kt) * scale
            out[start:stop] = _softmax_rows(scores) @ v
        return out

    return run


def make_cross_attn_kernel(length: int, channels: int, window, rng):
    wh, ww = window
    win = wh * ww
    if length % win != 0:
        return None
    nwin = length // win
    q = rng.standard_normal((nwin, win, channels)).astype(np.float32)
    k = rng.standard_normal((nwin, win, channels)).astype(np.float32)
    v = rng.standard_normal((nwin, win, channels)).astype(np.float32)
    scale = np.float32(1.0 / np.sqrt(channels))

    def run():
        scores = np.matmul(q, k.transpose(0, 2, 1)) * scale
        return np.matmul(_softmax_rows(scores), v)

    return run


def make_hsdm_scan_kernel(length: int, channels: int, directions: int,
                          state_dim: int, chunk_len: int, rng):
    h, w = _grid_for(length)
    x = rng.standard_normal((channels, length)).astype(np.float32)
    params = SsmParams.create(channels, state_dim, rng)
    paths = [build_path(d % 8, h, w) for d in range(directions)]

    def run():
        total = np.zeros_like(x)
        for path in paths:
            ordered = np.ascontiguousarray(x[:, path.perm])
            scanned = selective_scan_chunked(ordered, params, chunk_len)
            total += scanned[:, path.inverse]
        return total

    return run


def _build_kernel(kind: str, length: int, cfg: BenchConfig, rng):
    if kind == "conv":
        return make_conv_kernel(length, cfg.channels, rng)
    if kind == "self_attn":
        budget = cfg.memory_budget_mb * 1024 * 1024
        return make_self_attn_kernel(length, cfg.channels, rng, budget)
    if kind == "cross_attn":
        return make_cross_attn_kernel(length, cfg.channels, cfg.window, rng)
    if kind == "hsdm_scan":
        return make_hsdm_scan_kernel(length, cfg.channels, cfg.directions,
                                     cfg.state_dim, cfg.chunk_len, rng)
    raise ConfigError(f"unknown kernel {kind!r}, expected one of {KERNELS}")


def _timer_resolution() -> float:
    info = time.get_clock_info("perf_counter")
    return max(info.resolution, 1e-9)


def _time_once(run) -> float:
    t0 = time.perf_counter()
    run()
    return time.perf_counter() - t0


def bench_kernel(kind: str, cfg: BenchConfig) -> list:
    """Time one kernel across the length sweep; returns BenchRow items."""
    floor = 100.0 * _timer_resolution()
    rows = []
    kind_tag = KERNELS.index(kind) if kind in KERNELS else 99
    for length in cfg.lengths:
        rng = np.random.default_rng((cfg.seed, kind_tag, length))
        run = _build_kernel(kind, length, cfg, rng)
        if run is None:
            rows.append(BenchRow(kind, length, math.nan, math.nan, math.nan,
                                 reliable=False, note="skipped"))
            continue
        for _ in range(cfg.warmup):
            run()
        times = np.array([_time_once(run) for _ in range(cfg.repetitions)])
        median = float(np.median(times))
        rows.append(BenchRow(kind, length, median,
                             float(np.percentile(times, 10)),
                             float(np.percentile(times, 90)),
                             reliable=median > floor))
    return rows


def fit_slope(rows) -> tuple:
    """Least-squares slope of log(time) vs log(L) over reliable points."""
    pts = [(r.length, r.median_s) for r in rows if r.reliable]
    if len(pts) < 2:
        return (math.nan, math.nan, len(pts))
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    design = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, ly, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - ly) ** 2)))
    return (float(coef[0]), resid, len(pts))


def run_bench(cfg: BenchConfig, kernels=KERNELS) -> BenchResult:
    result = BenchResult()

    def _run_all():
        for kind in kernels:
            rows = bench_kernel(kind, cfg)
            result.rows.extend(rows)
            result.slopes[kind] = fit_slope(rows)

    if cfg.pin_threads and threadpool_limits is not None:
        with threadpool_limits(limits=1):
            _run_all()
    else:
        _run_all()
    return result
