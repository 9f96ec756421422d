"""Noise synthesis against an independent scalar reimplementation of the
PCG32 stream, plus the distributional invariants."""

import math

import numpy as np
import pytest

from hsidenoise.errors import ConfigError, DataError
from hsidenoise.metrics import psnr
from hsidenoise.noise import (NoiseSpec, Pcg32, corrupt,
                              generate_synthetic_clean)

MULT = 6364136223846793005
MASK = (1 << 64) - 1


class PyPcg:
    """Scalar-python PCG32, written independently of the vectorized one."""

    def __init__(self, seed, stream):
        self.inc = ((stream << 1) | 1) & MASK
        self.state = 0
        self.step()
        self.state = (self.state + seed) & MASK
        self.step()

    def step(self):
        self.state = (self.state * MULT + self.inc) & MASK

    def u32(self):
        old = self.state
        self.step()
        xs = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xs >> rot) | (xs << ((32 - rot) & 31))) & 0xFFFFFFFF

    def uniform(self):
        return (self.u32() + 0.5) * 2.0 ** -32

    def gaussians(self, n):
        m = (n + 1) // 2
        u1 = [self.uniform() for _ in range(m)]
        u2 = [self.uniform() for _ in range(m)]
        out = []
        for a, b in zip(u1, u2):
            r = math.sqrt(-2.0 * math.log(a))
            out.append(r * math.cos(2.0 * math.pi * b))
            out.append(r * math.sin(2.0 * math.pi * b))
        return out[:n]


def _clean(b=8, h=32, w=32, seed=7):
    return generate_synthetic_clean(b, h, w, 3, seed=seed)


def test_pcg_matches_scalar_reimplementation():
    ours = Pcg32(987654321, 17)
    ref = PyPcg(987654321, 17)
    assert ours.u32_block(100).tolist() == [ref.u32() for _ in range(100)]


def test_corrupt_is_deterministic():
    clean = _clean()
    spec = NoiseSpec("mixture", seed=42)
    assert np.array_equal(corrupt(clean, spec), corrupt(clean, spec))


def test_zero_sigma_is_identity():
    clean = _clean()
    spec = NoiseSpec("noniid_gauss", sigma_lo=0.0, sigma_hi=0.0, seed=3)
    assert np.array_equal(corrupt(clean, spec), clean)


def test_gaussian_psnr_matches_independent_stream_oracle():
    clean = _clean(8, 32, 32, seed=11).astype(np.float64)
    spec = NoiseSpec("noniid_gauss", seed=5)
    got = corrupt(clean.astype(np.float32), spec)
    oracle = clean.copy()
    for b in range(8):
        rng = PyPcg(5, b)
        sigma = (10.0 + rng.uniform() * 60.0) / 255.0
        field = np.array(rng.gaussians(32 * 32)).reshape(32, 32)
        oracle[b] += sigma * field
    oracle = oracle.astype(np.float32)
    ours = psnr(clean.astype(np.float32), got)
    ref = psnr(clean.astype(np.float32), oracle)
    assert abs(ours - ref) < 1e-6
    # the streams agree much more tightly than the dB tolerance implies
    assert np.max(np.abs(got - oracle)) < 1e-6


def test_structured_cases_affect_exactly_a_third_of_bands():
    clean = _clean(9, 24, 24, seed=2)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=8))
    for case in ("gauss_stripe", "gauss_deadline", "gauss_impulse"):
        noisy = corrupt(clean, NoiseSpec(case, seed=8))
        # gaussian draws precede structured ones on each band stream, so
        # bands differ from the gaussian-only cube iff structured noise hit
        changed = [b for b in range(9) if not np.array_equal(noisy[b], base[b])]
        assert len(changed) == 3, f"{case}: {changed}"


def test_deadline_columns_are_exactly_zero():
    clean = _clean(9, 24, 24, seed=2)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=8))
    noisy = corrupt(clean, NoiseSpec("gauss_deadline", seed=8))
    affected = [b for b in range(9) if not np.array_equal(noisy[b], base[b])]
    for b in affected:
        cols = np.where(np.any(noisy[b] != base[b], axis=0))[0]
        assert np.all(noisy[b][:, cols] == 0.0)


def test_stripe_column_counts_match_drawn_fraction():
    b, h, w = 9, 16, 40
    clean = _clean(b, h, w, seed=3)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=21))
    noisy = corrupt(clean, NoiseSpec("gauss_stripe", seed=21))
    sel = _oracle_band_selection(21, b, 3)
    for band in sel:
        rng = PyPcg(21, band)
        rng.uniform()                      # sigma
        rng.gaussians(h * w)               # field
        frac = 0.05 + rng.uniform() * 0.10
        expect = int(math.floor(frac * w + 0.5))
        cols = np.where(np.any(noisy[band] != base[band], axis=0))[0]
        assert len(cols) == expect
        # offsets are constant down each striped column
        delta = noisy[band] - base[band]
        for c in cols:
            col = delta[:, c]
            assert np.allclose(col, col[0], atol=1e-6)
            assert -0.25 <= col[0] <= 0.25


def _oracle_band_selection(seed, nbands, take):
    rng = PyPcg(seed, 0x7FFFFFFF)
    idx = list(range(nbands))
    for i in range(take):
        j = i + int(rng.uniform() * (nbands - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:take]


def test_band_selection_matches_oracle():
    clean = _clean(12, 16, 16, seed=4)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=33))
    noisy = corrupt(clean, NoiseSpec("gauss_deadline", seed=33))
    changed = sorted(b for b in range(12) if not np.array_equal(noisy[b], base[b]))
    assert changed == sorted(_oracle_band_selection(33, 12, 4))


def test_impulse_values_are_salt_or_pepper():
    clean = _clean(6, 24, 24, seed=5)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=13))
    noisy = corrupt(clean, NoiseSpec("gauss_impulse", seed=13))
    hit = noisy != base
    assert hit.any()
    assert np.all(np.isin(noisy[hit], [0.0, 1.0]))


def test_empirical_sigma_within_ten_percent():
    clean = np.full((2, 64, 64), 0.5, dtype=np.float32)
    spec = NoiseSpec("noniid_gauss", seed=17)
    noisy = corrupt(clean, spec)
    for b in range(2):
        rng = PyPcg(17, b)
        drawn = (10.0 + rng.uniform() * 60.0) / 255.0
        measured = float(np.std(noisy[b].astype(np.float64) - 0.5))
        assert abs(measured - drawn) / drawn < 0.10


def test_mixture_choice_frequencies():
    # 16x16 keeps every structured draw visible: stripe/deadline fractions
    # hit at least one column and impulse almost surely flips a pixel
    clean = _clean(1000, 16, 16, seed=6)
    base = corrupt(clean, NoiseSpec("noniid_gauss", seed=99))
    noisy = corrupt(clean, NoiseSpec("mixture", seed=99))
    counts = {0: 0, 1: 0, 2: 0, 3: 0}
    for b in range(1000):
        rng = PyPcg(99, b)
        rng.uniform()
        rng.gaussians(256)
        counts[min(int(rng.uniform() * 4.0), 3)] += 1
    bound = 3.0 * math.sqrt(0.25 * 0.75 / 1000.0)
    for choice, count in counts.items():
        assert abs(count / 1000.0 - 0.25) <= bound, f"choice {choice}: {count}"
    # 'none' bands are untouched beyond the gaussian field
    none_bands = [b for b in range(1000)
                  if np.array_equal(noisy[b], base[b])]
    assert len(none_bands) == counts[0]


def test_corrupt_validates_input():
    with pytest.raises(DataError):
        corrupt(np.full((2, 4, 4), 1.5, dtype=np.float32), NoiseSpec("mixture"))
    with pytest.raises(DataError):
        corrupt(np.zeros((4, 4), dtype=np.float32), NoiseSpec("mixture"))
    with pytest.raises(ConfigError):
        NoiseSpec("gaussian")
    with pytest.raises(ConfigError):
        NoiseSpec("mixture", sigma_lo=50.0, sigma_hi=10.0)
    with pytest.raises(ConfigError):
        NoiseSpec("mixture", impulse_lo=-0.1)


def test_generate_deterministic_and_bounded():
    a = generate_synthetic_clean(8, 16, 16, 3, seed=1)
    b = generate_synthetic_clean(8, 16, 16, 3, seed=1)
    assert np.array_equal(a, b)
    assert a.dtype == np.float32
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_generate_rank_one_is_spatially_constant():
    cube = generate_synthetic_clean(6, 12, 12, 1, seed=9, constant_spectrum=True)
    for b in range(6):
        assert np.all(cube[b] == cube[b, 0, 0])
    cube2 = generate_synthetic_clean(6, 12, 12, 1, seed=9)
    for b in range(6):
        assert np.allclose(cube2[b], cube2[b, 0, 0], atol=1e-7)


def test_generate_pixels_lie_in_spectra_hull():
    cube, maps, spectra = generate_synthetic_clean(
        8, 10, 10, 3, seed=12, return_components=True)
    # abundances are a convex combination at every pixel
    assert np.allclose(maps.sum(axis=0), 1.0, atol=1e-12)
    assert maps.min() >= 0.0
    # least-squares membership: recovered weights are convex and rebuild
    # the pixel spectrum
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, j = rng.integers(0, 10, size=2)
        pixel = cube[:, i, j].astype(np.float64)
        w, res, _, _ = np.linalg.lstsq(spectra.T, pixel, rcond=None)
        assert np.all(w > -1e-5)
        assert abs(w.sum() - 1.0) < 1e-4
        assert np.max(np.abs(spectra.T @ w - pixel)) < 1e-6


def test_generate_validates_arguments():
    with pytest.raises(ConfigError):
        generate_synthetic_clean(8, 16, 16, 0, seed=1)
    with pytest.raises(ConfigError):
        generate_synthetic_clean(0, 16, 16, 2, seed=1)
