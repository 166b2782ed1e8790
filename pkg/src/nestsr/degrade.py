"""Synthetic low-field degradation: HF image -> asymmetric decimation -> bilinear re-upsampling.

Images here are 4-D ``Tensor`` objects shaped [1, 1, H, W]. Widths and
heights are passed as ``(width, height)`` pairs, matching how image sizes are
usually quoted; arrays are always indexed ``[row, col]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tensor import DimensionError, Tensor

__all__ = [
    "AugmentSpec",
    "DegradeSpec",
    "DegenerateRangeError",
    "NormParams",
    "PairedSample",
    "augment",
    "bilinear_resize",
    "denormalize",
    "downsample",
    "intermediate_dims",
    "make_pair",
    "normalize",
    "sample_rng",
]


class DegenerateRangeError(ValueError):
    """The image has a single value and cannot be min/max normalized."""


@dataclass(frozen=True)
class AugmentSpec:
    rotation_max_deg: float = 10.0
    translate_frac: float = 0.05
    scale_range: tuple[float, float] = (0.95, 1.05)
    blur_sigma_max: float = 1.0
    crop_frac: float = 0.9
    rotate: bool = True
    translate: bool = True
    scale: bool = True
    blur: bool = True
    crop: bool = True

    def __post_init__(self):
        for name in ("rotation_max_deg", "translate_frac", "blur_sigma_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must be positive and ordered, got {self.scale_range}")
        if not (0 < self.crop_frac <= 1):
            raise ValueError("crop_frac must lie in (0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentSpec":
        return cls(rotate=False, translate=False, scale=False, blur=False, crop=False)


@dataclass(frozen=True)
class DegradeSpec:
    factor_horizontal: float = 1.5
    factor_vertical: float = 5.0
    intermediate_dims: tuple[int, int] | None = None
    output_dims: tuple[int, int] = (256, 256)
    normalize_range: tuple[float, float] = (-0.5, 0.5)
    augment: AugmentSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.factor_horizontal < 1 or self.factor_vertical < 1:
            raise ValueError("degradation factors must be >= 1")
        lo, hi = self.normalize_range
        if not lo < hi:
            raise ValueError(f"normalize_range must satisfy lo < hi, got {self.normalize_range}")
        if min(self.output_dims) < 1:
            raise ValueError("output_dims must be positive")


@dataclass(frozen=True)
class NormParams:
    src_min: float
    src_max: float
    lo: float
    hi: float


@dataclass
class PairedSample:
    hf: Tensor
    lf_bilinear: Tensor
    residual_target: Tensor
    intermediate_dims: tuple[int, int] = field(default=(0, 0))
    norm: NormParams | None = None
    name: str = ""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def intermediate_dims(width: int, height: int, spec: DegradeSpec) -> tuple[int, int]:
    """(width, height) after decimation: round(n / factor), bumped up to even."""
    if spec.intermediate_dims is not None:
        return tuple(spec.intermediate_dims)
    out = []
    for n, f in ((width, spec.factor_horizontal), (height, spec.factor_vertical)):
        d = _round_half_up(n / f)
        d += d % 2
        out.append(d)
    return out[0], out[1]


def normalize(image: Tensor, lo: float = -0.5, hi: float = 0.5) -> tuple[Tensor, NormParams]:
    data = image.data.astype(np.float64)
    mn, mx = float(data.min()), float(data.max())
    if not mx > mn:
        raise DegenerateRangeError(f"image is constant ({mn}); cannot normalize")
    scaled = lo + (data - mn) * ((hi - lo) / (mx - mn))
    return Tensor(scaled, dtype=image.dtype), NormParams(mn, mx, lo, hi)


def denormalize(image: Tensor, params: NormParams) -> Tensor:
    data = image.data.astype(np.float64)
    scale = (params.src_max - params.src_min) / (params.hi - params.lo)
    return Tensor(params.src_min + (data - params.lo) * scale, dtype=image.dtype)


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centre source taps for resampling ``src`` samples to ``dst``."""
    coord = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    i0 = np.floor(coord).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, coord - i0


def _resample(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    r0, r1, fr = _axis_weights(arr.shape[0], height)
    c0, c1, fc = _axis_weights(arr.shape[1], width)
    fr = fr[:, None]
    fc = fc[None, :]
    top = arr[r0][:, c0] * (1 - fc) + arr[r0][:, c1] * fc
    bot = arr[r1][:, c0] * (1 - fc) + arr[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def _plane(image: Tensor) -> np.ndarray:
    if image.data.ndim != 4 or image.shape[:2] != (1, 1):
        raise DimensionError(f"expected a [1,1,H,W] image, got {image.shape}")
    return image.data[0, 0].astype(np.float64)


def _wrap(arr: np.ndarray, like: Tensor) -> Tensor:
    return Tensor(arr[None, None], dtype=like.dtype)


def bilinear_resize(image: Tensor, target: tuple[int, int]) -> Tensor:
    """Resize to ``target`` = (width, height) by bilinear interpolation."""
    width, height = target
    if width < 1 or height < 1:
        raise DimensionError(f"target dims must be positive, got {target}")
    return _wrap(_resample(_plane(image), width, height), image)


def downsample(image: Tensor, spec: DegradeSpec) -> Tensor:
    plane = _plane(image)
    h, w = plane.shape
    tw, th = intermediate_dims(w, h, spec)
    if tw > w or th > h:
        raise DimensionError(f"intermediate dims {tw}x{th} exceed input {w}x{h}")
    return _wrap(_resample(plane, tw, th), image)


def sample_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent per-sample stream derived from (seed, sample index)."""
    return np.random.default_rng([seed, index])


def augment(hf: Tensor, spec: AugmentSpec, rng: np.random.Generator) -> Tensor:
    """Random rotation/translate/scale, blur and crop-resize, drawn from ``rng``.

    All draws happen regardless of which transforms are enabled, so toggling
    one transform does not shift the random stream of the others.
    """
    plane = _plane(hf)
    h, w = plane.shape
    angle = math.radians(rng.uniform(-1, 1) * spec.rotation_max_deg)
    shift = rng.uniform(-1, 1, size=2) * spec.translate_frac * np.array([h, w])
    zoom = rng.uniform(*spec.scale_range)
    sigma = rng.uniform(0, spec.blur_sigma_max)
    side = math.sqrt(rng.uniform(spec.crop_frac, 1.0))
    corner = rng.uniform(0, 1, size=2)

    out = plane
    matrix = np.eye(2)
    offset_shift = np.zeros(2)
    if spec.rotate and spec.rotation_max_deg:
        c, s = math.cos(angle), math.sin(angle)
        matrix = np.array([[c, -s], [s, c]]) @ matrix
    if spec.scale:
        matrix = matrix / zoom
    if spec.translate and spec.translate_frac:
        offset_shift = shift
    if not np.array_equal(matrix, np.eye(2)) or offset_shift.any():
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        offset = centre - matrix @ centre - offset_shift
        out = ndimage.affine_transform(out, matrix, offset=offset, order=1, mode="nearest")
    if spec.blur and sigma > 0:
        out = ndimage.gaussian_filter(out, sigma, mode="nearest")
    if spec.crop and spec.crop_frac < 1:
        ch = max(2, int(round(h * side)))
        cw = max(2, int(round(w * side)))
        r = int(round(corner[0] * (h - ch)))
        c = int(round(corner[1] * (w - cw)))
        out = _resample(out[r : r + ch, c : c + cw], w, h)
    if out is plane:
        return Tensor(hf.data, dtype=hf.dtype)
    return _wrap(out, hf)


def make_pair(hf_raw: Tensor, spec: DegradeSpec, rng: np.random.Generator | None = None) -> PairedSample:
    """Normalize, optionally augment, degrade and assemble a residual training pair."""
    plane = _plane(hf_raw)
    h, w = plane.shape
    if (w, h) != tuple(spec.output_dims):
        raise DimensionError(f"image is {w}x{h}, expected {spec.output_dims[0]}x{spec.output_dims[1]}")
    lo, hi = spec.normalize_range
    try:
        hf, params = normalize(hf_raw, lo, hi)
    except DegenerateRangeError:
        # constant input: everything maps to the range midpoint
        hf = Tensor(np.full(hf_raw.shape, (lo + hi) / 2), dtype=hf_raw.dtype)
        params = None
    if spec.augment is not None:
        if rng is None:
            rng = sample_rng(spec.seed)
        hf = augment(hf, spec.augment, rng)
    small = downsample(hf, spec)
    lf = bilinear_resize(small, (w, h))
    residual = Tensor(hf.data - lf.data, dtype=hf.dtype)
    # re-anchor hf so lf + residual reproduces it bit-exactly in the working dtype
    hf = Tensor(lf.data + residual.data, dtype=hf.dtype)
    return PairedSample(
        hf=hf,
        lf_bilinear=lf,
        residual_target=residual,
        intermediate_dims=(small.shape[3], small.shape[2]),
        norm=params,
    )
