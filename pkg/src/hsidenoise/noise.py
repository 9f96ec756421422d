"""Seeded degradation synthesis and synthetic clean-cube generation.

Every random draw comes from a PCG32 generator (XSH-RR output over a
64-bit LCG state) with one sub-stream per band, so band synthesis is
order-independent: corrupting bands in any order, or in parallel,
yields the same cube. The draw orders below are frozen contracts that
the test-suite oracle reimplements independently:

Stream ids:
  * band b of corrupt() uses stream id b
  * global band selection uses stream id 0x7fffffff
  * clean generation uses 0x10000+k (spectrum k) and 0x20000+k
    (abundance map k)

corrupt() draw order, per band stream:
  1. one uniform -> sigma_b = (lo + u*(hi-lo)) / 255
  2. H*W Gaussians (Box-Muller, see Pcg32.gaussians) -> additive field,
     row-major
  3. only in the mixture case: one uniform -> structured-noise choice
     floor(u*4) in {0 none, 1 stripe, 2 deadline, 3 impulse}
  4. for stripe/deadline: one uniform -> column fraction p; then a
     partial Fisher-Yates over range(W) drawing round-half-up(p*W)
     columns; for stripe only, one uniform per selected column (in
     selection order) -> offset -0.25 + 0.5*u added to the whole column
  5. for impulse: one uniform -> rate p; then H*W uniforms (flip mask,
     row-major, flip where u < p); then H*W uniforms (values, 1.0 where
     u < 0.5 else 0.0)

Global stream draw order (structured cases only, not mixture): a
partial Fisher-Yates over range(B) selecting floor(B*band_fraction)
affected bands.

Uniforms map u32 -> (u32 + 0.5) * 2^-32, so 0 and 1 are never hit.
Gaussians: for n values, draw ceil(n/2) uniforms u1 then ceil(n/2)
uniforms u2; pair i yields z0 = sqrt(-2 ln u1_i) cos(2 pi u2_i) and
z1 = sqrt(-2 ln u1_i) sin(2 pi u2_i); output order z0_0, z1_0, z0_1,
z1_1, ... truncated to n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

NOISE_CASES = ("noniid_gauss", "gauss_stripe", "gauss_deadline",
               "gauss_impulse", "mixture")

_PCG_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_GLOBAL_STREAM = 0x7FFFFFFF
_SPECTRUM_STREAM = 0x10000
_ABUNDANCE_STREAM = 0x20000


class Pcg32:
    """PCG32 (XSH-RR 64/32) with vectorized block generation.

    Blocks are produced by composing the affine state update as a
    prefix scan, so a block of n outputs advances the state exactly n
    single steps and interleaves freely with next_u32().
    """

    def __init__(self, seed: int, stream: int = 0):
        self.inc = ((stream << 1) | 1) & _MASK64
        self.state = 0
        self._step()
        self.state = (self.state + seed) & _MASK64
        self._step()

    def _step(self) -> None:
        self.state = (self.state * _PCG_MULT + self.inc) & _MASK64

    @staticmethod
    def _output(old: np.ndarray) -> np.ndarray:
        xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)).astype(np.uint32)
        rot = (old >> np.uint64(59)).astype(np.uint32)
        left = (np.uint32(32) - rot) & np.uint32(31)
        return (xorshifted >> rot) | (xorshifted << left)

    def next_u32(self) -> int:
        old = self.state
        self._step()
        return int(self._output(np.array([old], dtype=np.uint64))[0])

    def u32_block(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty(0, dtype=np.uint32)
        a = np.full(n, _PCG_MULT, dtype=np.uint64)
        c = np.full(n, self.inc, dtype=np.uint64)
        step = 1
        while step < n:
            c[step:] = a[step:] * c[:-step] + c[step:]
            a[step:] = a[step:] * a[:-step]
            step <<= 1
        after = a * np.uint64(self.state) + c
        olds = np.empty(n, dtype=np.uint64)
        olds[0] = self.state
        olds[1:] = after[:-1]
        self.state = int(after[-1])
        return self._output(olds)

    def uniforms(self, n: int) -> np.ndarray:
        return (self.u32_block(n).astype(np.float64) + 0.5) * 2.0 ** -32

    def gaussians(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


def _fisher_yates_take(rng: Pcg32, n: int, m: int) -> np.ndarray:
    """First m entries of a seeded partial Fisher-Yates shuffle of range(n)."""
    idx = np.arange(n)
    for i in range(m):
        u = (rng.next_u32() + 0.5) * 2.0 ** -32
        j = i + int(u * (n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:m]


@dataclass
class NoiseSpec:
    case: str
    sigma_lo: float = 10.0      # 8-bit units; divided by 255 at synthesis
    sigma_hi: float = 70.0
    stripe_lo: float = 0.05     # fraction of columns
    stripe_hi: float = 0.15
    impulse_lo: float = 0.10    # pixel replacement rate
    impulse_hi: float = 0.70
    band_fraction: float = 1.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if self.case not in NOISE_CASES:
            raise ConfigError(f"noise case must be one of {NOISE_CASES}, got '{self.case}'")
        for lo, hi, top, name in ((self.sigma_lo, self.sigma_hi, 255.0, "sigma"),
                                  (self.stripe_lo, self.stripe_hi, 1.0, "stripe"),
                                  (self.impulse_lo, self.impulse_hi, 1.0, "impulse")):
            if not (0.0 <= lo <= hi <= top):
                raise ConfigError(f"{name} range [{lo}, {hi}] invalid")
        if not 0.0 <= self.band_fraction <= 1.0:
            raise ConfigError(f"band_fraction {self.band_fraction} outside [0, 1]")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _apply_stripe(band: np.ndarray, rng: Pcg32, spec: NoiseSpec, deadline: bool) -> None:
    h, w = band.shape
    u = (rng.next_u32() + 0.5) * 2.0 ** -32
    frac = spec.stripe_lo + u * (spec.stripe_hi - spec.stripe_lo)
    ncols = _round_half_up(frac * w)
    cols = _fisher_yates_take(rng, w, ncols)
    if deadline:
        band[:, cols] = 0.0
    else:
        offsets = -0.25 + 0.5 * rng.uniforms(ncols)
        for col, off in zip(cols, offsets):
            band[:, col] += off


def _apply_impulse(band: np.ndarray, rng: Pcg32, spec: NoiseSpec) -> None:
    h, w = band.shape
    u = (rng.next_u32() + 0.5) * 2.0 ** -32
    rate = spec.impulse_lo + u * (spec.impulse_hi - spec.impulse_lo)
    mask = (rng.uniforms(h * w) < rate).reshape(h, w)
    values = (rng.uniforms(h * w) < 0.5).astype(np.float64).reshape(h, w)
    band[mask] = values[mask]


def corrupt(clean: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Apply one of the five degradation cases to a clean [B, H, W] cube.

    Synthesis never clamps: structured offsets and Gaussian tails may
    leave [0, 1]. See the module docstring for the frozen draw order.
    """
    clean = np.asarray(clean)
    if clean.ndim != 3:
        raise DataError(f"corrupt: expected [B, H, W], got shape {clean.shape}")
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise DataError("corrupt: clean cube must lie in [0, 1]")
    b, h, w = clean.shape
    structured = {"gauss_stripe": "stripe", "gauss_deadline": "deadline",
                  "gauss_impulse": "impulse"}.get(spec.case)
    affected: set[int] = set()
    if structured is not None:
        m = int(np.floor(b * spec.band_fraction))
        sel = _fisher_yates_take(Pcg32(spec.seed, _GLOBAL_STREAM), b, m)
        affected = set(int(i) for i in sel)
    noisy = clean.astype(np.float64)
    for band_idx in range(b):
        rng = Pcg32(spec.seed, band_idx)
        u = (rng.next_u32() + 0.5) * 2.0 ** -32
        sigma = (spec.sigma_lo + u * (spec.sigma_hi - spec.sigma_lo)) / 255.0
        noisy[band_idx] += sigma * rng.gaussians(h * w).reshape(h, w)
        kind = None
        if spec.case == "mixture":
            choice = min(int(rng.uniforms(1)[0] * 4.0), 3)
            kind = (None, "stripe", "deadline", "impulse")[choice]
        elif band_idx in affected:
            kind = structured
        if kind == "stripe":
            _apply_stripe(noisy[band_idx], rng, spec, deadline=False)
        elif kind == "deadline":
            _apply_stripe(noisy[band_idx], rng, spec, deadline=True)
        elif kind == "impulse":
            _apply_impulse(noisy[band_idx], rng, spec)
    return noisy.astype(np.float32)


def generate_synthetic_clean(bands: int, height: int, width: int, rank: int,
                             seed: int, constant_spectrum: bool = False,
                             return_components: bool = False):
    """Low-rank synthetic clean cube: convex per-pixel mixtures of smooth spectra.

    Abundance maps are sums of random Gaussian blobs normalized to a
    convex combination at every pixel; spectra are smooth sinusoid
    mixtures kept inside (0, 1). The cube therefore lies in [0, 1] by
    construction and every pixel's spectrum sits in the convex hull of
    the component spectra.
    """
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    if bands < 1 or height < 1 or width < 1:
        raise ConfigError("bands, height, width must all be >= 1")
    t = np.arange(bands, dtype=np.float64) / max(bands - 1, 1)
    spectra = np.empty((rank, bands), dtype=np.float64)
    for k in range(rank):
        rng = Pcg32(seed, _SPECTRUM_STREAM + k)
        u = rng.uniforms(6)
        if constant_spectrum:
            spectra[k] = 0.25 + 0.5 * u[0]
        else:
            spectra[k] = (0.5
                          + 0.20 * u[0] * np.sin(2.0 * np.pi * ((1.0 + 2.0 * u[1]) * t + u[2]))
                          + 0.15 * u[3] * np.sin(2.0 * np.pi * ((2.0 + 3.0 * u[4]) * t + u[5])))
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    maps = np.empty((rank, height, width), dtype=np.float64)
    for k in range(rank):
        rng = Pcg32(seed, _ABUNDANCE_STREAM + k)
        acc = np.full((height, width), 0.05, dtype=np.float64)
        for _ in range(3):
            u = rng.uniforms(5)
            cy, cx = u[0] * height, u[1] * width
            sy = (0.15 + 0.35 * u[2]) * height
            sx = (0.15 + 0.35 * u[3]) * width
            amp = 0.5 + u[4]
            acc += amp * np.exp(-((ys - cy) ** 2 / (2.0 * sy * sy)
                                  + (xs - cx) ** 2 / (2.0 * sx * sx)))
        maps[k] = acc
    maps /= maps.sum(axis=0, keepdims=True)
    cube = np.einsum("khw,kb->bhw", maps, spectra)
    cube = np.clip(cube, 0.0, 1.0).astype(np.float32)
    if return_components:
        return cube, maps, spectra
    return cube
