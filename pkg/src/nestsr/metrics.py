"""PSNR, SSIM and per-method evaluation reports."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError

__all__ = [
    "EvalReport",
    "MetricConfig",
    "ReportRow",
    "evaluate",
    "gaussian_window",
    "psnr",
    "ssim",
]

LF_BASELINE = "LF baseline"


@dataclass(frozen=True)
class MetricConfig:
    psnr_peak: float | None = None  # None: ground-truth dynamic range
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_dynamic_range: float = 1.0

    def __post_init__(self):
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")
        if self.ssim_k1 <= 0 or self.ssim_k2 <= 0:
            raise ValueError("ssim_k1 and ssim_k2 must be positive")
        if self.ssim_sigma <= 0 or self.ssim_dynamic_range <= 0:
            raise ValueError("ssim_sigma and ssim_dynamic_range must be positive")
        if self.psnr_peak is not None and self.psnr_peak <= 0:
            raise ValueError("psnr_peak must be positive")

    @classmethod
    def for_range(cls, lo: float, hi: float, **kw) -> "MetricConfig":
        return cls(ssim_dynamic_range=hi - lo, **kw)


def _as_plane(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "data", img), dtype=np.float64)
    return arr.reshape(arr.shape[-2:]) if arr.ndim > 2 else arr


def psnr(pred, gt, cfg: MetricConfig = MetricConfig()) -> float:
    """10*log10(peak^2 / MSE) in dB; identical images give ``inf``."""
    p, g = _as_plane(pred), _as_plane(gt)
    if p.shape != g.shape:
        raise DimensionError(f"psnr: shapes {p.shape} and {g.shape} differ")
    mse = float(np.mean((p - g) ** 2))
    if mse == 0:
        return math.inf
    peak = cfg.psnr_peak if cfg.psnr_peak is not None else float(g.max() - g.min())
    if peak <= 0:
        raise ValueError("ground truth is constant; pass an explicit psnr_peak")
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(pred, gt, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean SSIM over all positions where the Gaussian window fits inside the image."""
    x, y = _as_plane(pred), _as_plane(gt)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shapes {x.shape} and {y.shape} differ")
    k = cfg.ssim_window
    if min(x.shape) < k:
        raise DimensionError(f"ssim: image {x.shape} smaller than {k}x{k} window")
    taps = gaussian_window(k, cfg.ssim_sigma)
    c1 = (cfg.ssim_k1 * cfg.ssim_dynamic_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.ssim_dynamic_range) ** 2
    mx, my = _filter_valid(x, taps), _filter_valid(y, taps)
    vx = _filter_valid(x * x, taps) - mx * mx
    vy = _filter_valid(y * y, taps) - my * my
    cov = _filter_valid(x * y, taps) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class ReportRow:
    method: str
    n: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    n_inf: int = 0


@dataclass
class EvalReport:
    rows: list[ReportRow]
    per_image: list[tuple[str, str, float, float]] = field(default_factory=list)

    HEADER = "method,n,psnr_mean,psnr_std,ssim_mean,ssim_std"

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.HEADER + "\n")
        for r in self.rows:
            buf.write(
                f"{r.method},{r.n},{_fmt(r.psnr_mean)},{_fmt(r.psnr_std)},"
                f"{_fmt(r.ssim_mean)},{_fmt(r.ssim_std)}\n"
            )
        for r in self.rows:
            if r.n_inf:
                buf.write(f"# {r.method}: {r.n_inf} of {r.n} images had infinite PSNR, excluded from psnr_mean/psnr_std\n")
        return buf.getvalue()

    def per_image_csv(self) -> str:
        buf = io.StringIO()
        buf.write("method,image,psnr,ssim\n")
        for method, name, p, s in self.per_image:
            buf.write(f"{method},{name},{_fmt(p)},{_fmt(s)}\n")
        return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def _aggregate(method: str, psnrs: list[float], ssims: list[float]) -> ReportRow:
    finite = [p for p in psnrs if math.isfinite(p)]
    n_inf = len(psnrs) - len(finite)
    if finite:
        pm, ps = float(np.mean(finite)), float(np.std(finite))
    else:
        pm, ps = math.inf, 0.0
    return ReportRow(method, len(psnrs), pm, ps, float(np.mean(ssims)), float(np.std(ssims)), n_inf)


def evaluate(
    predictions: Mapping[str, Sequence],
    gts: Sequence,
    cfg: MetricConfig = MetricConfig(),
    baseline: Sequence | None = None,
    names: Sequence[str] | None = None,
) -> EvalReport:
    """Score each method's predictions against ``gts``.

    ``baseline`` holds the bilinear LF inputs and becomes the "LF baseline"
    row. Rows are sorted by method label.
    """
    if len(gts) == 0:
        raise ValueError("evaluate needs a non-empty validation set")
    methods = dict(predictions)
    if baseline is not None:
        methods[LF_BASELINE] = baseline
    names = list(names) if names is not None else [f"{k:04d}" for k in range(len(gts))]
    rows, per_image = [], []
    for method in sorted(methods):
        preds = methods[method]
        if len(preds) != len(gts):
            raise ValueError(f"{method}: {len(preds)} predictions for {len(gts)} images")
        ps, ss = [], []
        for name, p, g in zip(names, preds, gts):
            ps.append(psnr(p, g, cfg))
            ss.append(ssim(p, g, cfg))
            per_image.append((method, name, ps[-1], ss[-1]))
        rows.append(_aggregate(method, ps, ss))
    return EvalReport(rows, per_image)
