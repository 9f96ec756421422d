"""Figure rendering for report-producing commands.

Every function takes already-computed results and writes one PNG; the
CSV files remain the data of record and figures are a side output that
callers can switch off.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def save_bench_figure(result, path) -> None:
    """Log-log median time per kernel with fitted slopes in the legend."""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for kernel in sorted({r.kernel for r in result.rows}):
        rows = [r for r in result.rows_for(kernel) if r.reliable]
        if not rows:
            continue
        xs = [r.length for r in rows]
        ys = [r.median_s for r in rows]
        lo = [r.median_s - r.p10_s for r in rows]
        hi = [r.p90_s - r.median_s for r in rows]
        slope = result.slopes.get(kernel, (float("nan"),))[0]
        ax.errorbar(xs, ys, yerr=[lo, hi], marker="o", capsize=3,
                    label=f"{kernel} (slope {slope:.2f})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sequence length L")
    ax.set_ylabel("median wall time [s]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_curves(log, path) -> None:
    """Loss (log scale) and validation PSNR against the epoch index."""
    epochs = [row[0] for row in log.rows]
    losses = [row[2] for row in log.rows]
    vals = [row[4] for row in log.rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.plot(epochs, losses, marker="o", color="tab:blue", label="train loss")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared error", color="tab:blue")
    ax.grid(True, alpha=0.3)
    if np.all(np.isfinite(vals)):
        ax2 = ax.twinx()
        ax2.plot(epochs, vals, marker="s", color="tab:orange",
                 label="validation PSNR")
        ax2.set_ylabel("validation PSNR [dB]", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_band_metrics(report, path) -> None:
    """Per-band PSNR bars with the SSIM curve overlaid."""
    psnr_band = np.asarray(report.per_band_psnr)
    ssim_band = np.asarray(report.per_band_ssim)
    bands = np.arange(psnr_band.size)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.bar(bands, psnr_band, color="tab:blue", alpha=0.7, label="PSNR")
    ax.set_xlabel("band")
    ax.set_ylabel("PSNR [dB]", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(bands, ssim_band, marker="o", color="tab:orange", label="SSIM")
    ax2.set_ylabel("SSIM", color="tab:orange")
    ax2.set_ylim(0.0, 1.05)
    ax.set_title(f"mean PSNR {report.psnr_db:.2f} dB, "
                 f"SSIM {report.ssim:.4f}, SAM {report.sam_rad:.4f} rad")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
