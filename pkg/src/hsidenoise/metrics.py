"""PSNR, SSIM, and SAM for [B, H, W] cubes on a [0, 1] data range.

Conventions: PSNR and SSIM are computed per band and averaged over
bands; SAM is computed per pixel and averaged over pixels. PSNR is
capped at 100 dB when a band's MSE vanishes so reports stay
serializable. The bare metric functions use inputs as given;
MetricsReport.compute windows both cubes to [-0.5, 1.5] first, since
synthetic noise is never clamped at synthesis time and a single wild
outlier should not dominate a band's score.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

PSNR_CAP_DB = 100.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"metric inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim != 3:
        raise ShapeError(f"metrics expect [B, H, W], got {x.shape}")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray, per_band: bool = False):
    """Mean over bands of 10*log10(1 / MSE_b), capped at 100 dB."""
    x, y = _check_pair(x, y)
    mse = np.mean((x - y) ** 2, axis=(1, 2))
    vals = np.where(mse < 1e-10, PSNR_CAP_DB,
                    10.0 * np.log10(1.0 / np.maximum(mse, 1e-300)))
    vals = np.minimum(vals, PSNR_CAP_DB)
    return (float(vals.mean()), vals) if per_band else float(vals.mean())


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("hwij,ij->hw", view, window)


def ssim(x: np.ndarray, y: np.ndarray, per_band: bool = False):
    """Mean over bands of single-scale SSIM (11x11 Gaussian window, sigma 1.5)."""
    x, y = _check_pair(x, y)
    _, h, w = x.shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ShapeError(f"ssim needs H, W >= {_SSIM_WINDOW}, got {h}x{w}")
    window = _gaussian_window()
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    vals = np.empty(x.shape[0])
    for b in range(x.shape[0]):
        xb, yb = x[b], y[b]
        mx = _windowed_mean(xb, window)
        my = _windowed_mean(yb, window)
        sxx = _windowed_mean(xb * xb, window) - mx * mx
        syy = _windowed_mean(yb * yb, window) - my * my
        sxy = _windowed_mean(xb * yb, window) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals[b] = float(np.mean(num / den))
    return (float(vals.mean()), vals) if per_band else float(vals.mean())


def sam(x: np.ndarray, y: np.ndarray) -> float:
    """Mean spectral angle in radians; near-zero-norm pixels contribute 0."""
    x, y = _check_pair(x, y)
    dot = np.sum(x * y, axis=0)
    sx = np.sum(x * x, axis=0)
    sy = np.sum(y * y, axis=0)
    valid = (np.sqrt(sx) >= 1e-8) & (np.sqrt(sy) >= 1e-8)
    # sqrt of the product (not product of sqrts): identical spectra then
    # give dot == sqrt(sx*sy) bit-exactly, so the angle is exactly zero
    cos = np.clip(np.divide(dot, np.sqrt(sx * sy), out=np.ones_like(dot),
                            where=valid), -1.0, 1.0)
    angle = np.where(valid, np.arccos(cos), 0.0)
    return float(angle.mean())


@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    sam_rad: float
    per_band_psnr: np.ndarray | None = field(default=None, repr=False)
    per_band_ssim: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def compute(cls, x: np.ndarray, y: np.ndarray,
                per_band: bool = True) -> "MetricsReport":
        # noise synthesis never clamps, so scoring does: window to
        # [-0.5, 1.5] here rather than inside the pure metric functions
        x = np.clip(x, -0.5, 1.5)
        y = np.clip(y, -0.5, 1.5)
        p, pb = psnr(x, y, per_band=True)
        s, sb = ssim(x, y, per_band=True)
        a = sam(x, y)
        return cls(psnr_db=p, ssim=s, sam_rad=a,
                   per_band_psnr=pb if per_band else None,
                   per_band_ssim=sb if per_band else None)

    def to_csv(self) -> str:
        return f"psnr_db,ssim,sam_rad\n{self.psnr_db:.9g},{self.ssim:.9g},{self.sam_rad:.9g}\n"

    def per_band_csv(self) -> str:
        if self.per_band_psnr is None or self.per_band_ssim is None:
            raise ValueError("per-band values were not computed")
        buf = io.StringIO()
        buf.write("band,psnr_db,ssim\n")
        for i, (p, s) in enumerate(zip(self.per_band_psnr, self.per_band_ssim)):
            buf.write(f"{i},{p:.9g},{s:.9g}\n")
        return buf.getvalue()

    def __str__(self):
        return (f"psnr_db={self.psnr_db:.4f} ssim={self.ssim:.6f} "
                f"sam_rad={self.sam_rad:.6f}")
