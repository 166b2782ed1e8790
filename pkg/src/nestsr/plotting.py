"""Figures written next to the CSV reports (training curves, comparisons, metric bars)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def smooth(values: Sequence[float], window: int = 50) -> np.ndarray:
    """Trailing moving average; early points average whatever is available."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_training(history, val_history, path, window: int = 50) -> Path:
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2 if val_history else 1, figsize=(8 if val_history else 4, 3), squeeze=False)
        ax = axes[0, 0]
        if history:
            steps, losses = zip(*history)
            ax.plot(steps, losses, color="0.75", lw=0.6, label="per step")
            ax.plot(steps, smooth(losses, window), color="C0", lw=1.2, label=f"mean of {window}")
            ax.legend(frameon=False)
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        if val_history:
            steps, _, ps, ss = zip(*val_history)
            ax = axes[0, 1]
            ax.plot(steps, ps, color="C1", marker="o", ms=3)
            ax.set_xlabel("step")
            ax.set_ylabel("val PSNR (dB)", color="C1")
            twin = ax.twinx()
            twin.plot(steps, ss, color="C2", marker="s", ms=3)
            twin.set_ylabel("val SSIM", color="C2")
        fig.tight_layout()
        return _save(fig, path)


def plot_comparison(lf, sr, hf, path, title: str = "") -> Path:
    """LF input, SR output, HF target and both absolute-error maps."""
    planes = [np.asarray(getattr(a, "data", a), dtype=np.float64).reshape(np.shape(getattr(a, "data", a))[-2:])
              for a in (lf, sr, hf)]
    lf_p, sr_p, hf_p = planes
    lo, hi = hf_p.min(), hf_p.max()
    err_hi = max(np.abs(lf_p - hf_p).max(), 1e-12)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 5, figsize=(12, 2.8))
        for ax, img, name in zip(axes[:3], planes, ("LF bilinear", "SR", "HF")):
            ax.imshow(img, cmap="gray", vmin=lo, vmax=hi, interpolation="nearest")
            ax.set_title(name)
        for ax, img, name in zip(axes[3:], (lf_p - hf_p, sr_p - hf_p), ("|LF - HF|", "|SR - HF|")):
            ax.imshow(np.abs(img), cmap="magma", vmin=0, vmax=err_hi, interpolation="nearest")
            ax.set_title(name)
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_report(report: EvalReport, path) -> Path:
    """Bar chart of mean PSNR and SSIM per method with std error bars."""
    rows = report.rows
    labels = [r.method for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(max(5, 1.6 * len(rows) + 2), 3))
        psnr_means = [r.psnr_mean if np.isfinite(r.psnr_mean) else np.nan for r in rows]
        a1.bar(x, psnr_means, yerr=[r.psnr_std for r in rows], color="C0", capsize=3)
        a1.set_ylabel("PSNR (dB)")
        a2.bar(x, [r.ssim_mean for r in rows], yerr=[r.ssim_std for r in rows], color="C2", capsize=3)
        a2.set_ylabel("SSIM")
        for ax in (a1, a2):
            ax.set_xticks(x)
            ax.set_xticklabels(labels, rotation=20, ha="right")
        finite = [p for p in psnr_means if np.isfinite(p)]
        if finite:
            a1.set_ylim(min(finite) - 2, max(finite) + 2)
        ssims = [r.ssim_mean for r in rows]
        a2.set_ylim(max(-1.0, min(ssims) - 0.05), min(1.0, max(ssims) + 0.05) + 1e-3)
        fig.tight_layout()
        return _save(fig, path)
