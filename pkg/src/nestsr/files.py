"""Image files: the FGRD float grid format and grayscale PNG."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Tensor

__all__ = ["FormatError", "read_fgrd", "read_image", "read_png", "write_fgrd", "write_image", "write_png", "stem"]

FGRD_MAGIC = b"FGRD"
MIN_DIM = 8
SUFFIXES = (".hf", ".lf", ".res", ".sr")


class FormatError(ValueError):
    pass


def write_fgrd(path: str | Path, image: np.ndarray) -> None:
    arr = np.asarray(getattr(image, "data", image))
    arr = arr.reshape(arr.shape[-2:])
    h, w = arr.shape
    header = FGRD_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_fgrd(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != FGRD_MAGIC:
        raise FormatError(f"{path}: not an FGRD file")
    w, h = struct.unpack("<II", buf[4:12])
    if w < MIN_DIM or h < MIN_DIM:
        raise FormatError(f"{path}: {w}x{h} is below the {MIN_DIM}x{MIN_DIM} minimum")
    if len(buf) - 12 != 4 * w * h:
        raise FormatError(f"{path}: payload is {len(buf) - 12} bytes, expected {4 * w * h}")
    return np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w).astype(np.float32)


def read_png(path: str | Path) -> np.ndarray:
    """Grayscale PNG scaled to [0, 1]: 8-bit by 255, 16-bit by 65535."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            raise FormatError(f"{path}: expected a single-channel PNG, got mode {im.mode}")
    if min(arr.shape) < MIN_DIM:
        raise FormatError(f"{path}: image {arr.shape[1]}x{arr.shape[0]} is too small")
    return arr


def write_png(path: str | Path, image, bits: int = 8, lo: float | None = None, hi: float | None = None) -> None:
    """Write a grayscale PNG, mapping [lo, hi] (default: data min/max) to the full code range."""
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    arr = arr.reshape(arr.shape[-2:])
    lo = float(arr.min()) if lo is None else lo
    hi = float(arr.max()) if hi is None else hi
    scaled = np.clip((arr - lo) / (hi - lo), 0, 1) if hi > lo else np.zeros_like(arr)
    if bits == 16:
        Image.fromarray(np.round(scaled * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(scaled * 255).astype(np.uint8), mode="L").save(path)


def read_image(path: str | Path, dtype=None) -> Tensor:
    path = Path(path)
    if path.suffix.lower() == ".png":
        arr = read_png(path)
    elif path.suffix.lower() == ".fgrd":
        arr = read_fgrd(path)
    else:
        raise FormatError(f"{path}: unsupported extension (use .fgrd or .png)")
    return Tensor(arr[None, None], dtype=dtype)


def write_image(path: str | Path, image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, image, bits=16, lo=0.0, hi=1.0)
    else:
        write_fgrd(path, image)


def stem(path: str | Path) -> str:
    """File name without extension or a trailing pair-role suffix (.hf/.lf/.res/.sr)."""
    name = Path(path).name
    base = name.rsplit(".", 1)[0] if "." in name else name
    for s in SUFFIXES:
        if base.endswith(s):
            return base[: -len(s)]
    return base


def write_pair(out_dir: str | Path, name: str, sample) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for role, img in (("hf", sample.hf), ("lf", sample.lf_bilinear), ("res", sample.residual_target)):
        p = out_dir / f"{name}.{role}.fgrd"
        write_fgrd(p, img)
        paths.append(p)
    return paths


def load_pairs(data_dir: str | Path, dtype=None) -> list:
    """Read every ``<name>.hf/.lf/.res.fgrd`` triple in ``data_dir``, sorted by name."""
    from .degrade import PairedSample

    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    out = []
    for hf_path in sorted(data_dir.glob("*.hf.fgrd")):
        name = hf_path.name[: -len(".hf.fgrd")]
        lf_path = data_dir / f"{name}.lf.fgrd"
        res_path = data_dir / f"{name}.res.fgrd"
        for p in (lf_path, res_path):
            if not p.exists():
                raise FormatError(f"{name}: missing {p.name}")
        hf, lf, res = (read_image(p, dtype) for p in (hf_path, lf_path, res_path))
        if not hf.shape == lf.shape == res.shape:
            raise FormatError(f"{name}: hf/lf/res shapes differ")
        out.append(PairedSample(hf=hf, lf_bilinear=lf, residual_target=res, name=name))
    return out
