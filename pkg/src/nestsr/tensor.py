"""Dense tensors with reverse-mode automatic differentiation.

Only the operations the super-resolution network and its losses need are
provided. Convolutions are cross-correlations (no kernel flip).

Each tensor produced by a differentiable op records its parents and a
backward closure. ``backward`` collects the reachable subgraph, orders it by
creation sequence (which is a valid execution order) and runs the closures
in reverse, so every op is visited exactly once.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "DomainError",
    "Graph",
    "Tensor",
    "add",
    "backward",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "default_dtype",
    "get_dtype",
    "log",
    "maxpool2d",
    "mean",
    "mul_scalar",
    "no_grad",
    "relu",
    "set_debug",
    "set_dtype",
    "square",
    "sub",
    "sum",
]


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an op."""


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


_dtype: type = np.float32
_grad_enabled = True
_debug = False
_seq = itertools.count()


def set_dtype(dtype) -> None:
    """Select the element type (float32 or float64) for newly built tensors."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _dtype = dtype


def get_dtype():
    return _dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(previous)


def set_debug(flag: bool) -> None:
    """Turn on finiteness assertions after every forward op."""
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """n-dimensional float array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _dtype, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, dict], None] | None = None
        self._op = "leaf"
        self._seq = next(_seq)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out._seq = next(_seq)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = None
        if _debug and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite output from {op}")
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def dump(self, fmt: str = "{:.6g}") -> str:
        """Render the tensor as a text grid (last axis across, one row per line)."""
        arr = self.data
        if arr.ndim == 0:
            return fmt.format(float(arr))
        rows = arr.reshape(-1, arr.shape[-1])
        lines = []
        width = arr.shape[-2] if arr.ndim >= 2 else 1
        for r, row in enumerate(rows):
            if arr.ndim >= 2 and r and r % width == 0:
                lines.append("")
            lines.append(" ".join(fmt.format(float(v)) for v in row))
        return "\n".join(lines)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, scalar: float) -> "Tensor":
        return mul_scalar(self, scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _wire(out: Tensor, fn: Callable[[np.ndarray, dict], None]) -> Tensor:
    if out.requires_grad:
        out._backward = fn
    return out


class Graph:
    """Ops reachable from an output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen[id(t)] = t
            stack.extend(t._parents)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    @property
    def ops(self) -> list[Tensor]:
        return [t for t in self.nodes if t._backward is not None]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring tensor that feeds ``loss``.

    Gradients accumulate, so call ``zero_grad`` on leaves between steps.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    graph = Graph.from_output(loss)
    # intermediate grads live only for this pass
    upstream: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(graph.nodes):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        node.grad = g
        node._backward(g, upstream)


def _send(upstream: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if t._backward is None:
        # leaf: accumulate directly so repeated use sums up
        t._accumulate(g)
        return
    if key in upstream:
        upstream[key] = upstream[key] + g
    else:
        upstream[key] = g


# -- elementwise -------------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor._from_op(a.data + b.data, (a, b), "add")

    def _bw(g, up):
        _send(up, a, g)
        _send(up, b, g)

    return _wire(out, _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor._from_op(a.data - b.data, (a, b), "sub")

    def _bw(g, up):
        _send(up, a, g)
        _send(up, b, -g)

    return _wire(out, _bw)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    out = Tensor._from_op(a.data * c, (a,), "mul_scalar")
    return _wire(out, lambda g, up: _send(up, a, g * c))


def square(a: Tensor) -> Tensor:
    out = Tensor._from_op(a.data * a.data, (a,), "square")
    two = a.data.dtype.type(2)
    return _wire(out, lambda g, up: _send(up, a, two * a.data * g))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    out = Tensor._from_op(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), "sum")
    return _wire(out, lambda g, up: _send(up, a, np.full(a.shape, g, dtype=a.data.dtype)))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor._from_op(np.asarray(a.data.sum() / n, dtype=a.data.dtype), (a,), "mean")
    return _wire(out, lambda g, up: _send(up, a, np.full(a.shape, g / n, dtype=a.data.dtype)))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    out = Tensor._from_op(np.log(a.data), (a,), "log")
    return _wire(out, lambda g, up: _send(up, a, g / a.data))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor._from_op(np.where(mask, a.data, a.data.dtype.type(0)), (a,), "relu")
    return _wire(out, lambda g, up: _send(up, a, g * mask))


# -- spatial -----------------------------------------------------------------


def _check4(t: Tensor, name: str) -> None:
    if t.data.ndim != 4:
        raise DimensionError(f"{name} must be 4-D [N,C,H,W], got shape {t.shape}")


_IM2COL_LIMIT = 1 << 24


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, r0: int, r1: int, wo: int) -> np.ndarray:
    """[N, C*kh*kw, rows*wo] patch matrix for output rows r0..r1-1."""
    n, c = xp.shape[:2]
    band = xp[:, :, r0 * stride : (r1 - 1) * stride + kh]
    win = sliding_window_view(band, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :, :wo]
    # [N, C, rows, wo, kh, kw] -> [N, C, kh, kw, rows, wo]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, (r1 - r0) * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation of ``x`` [N,Cin,H,W] with ``weight`` [Cout,Cin,kH,kW]."""
    _check4(x, "conv2d input")
    _check4(weight, "conv2d weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} must be odd")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d: stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d: padded input {h}x{w}+{padding} smaller than kernel")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wm = weight.data.reshape(cout, cin * kh * kw)
    tracked = _grad_enabled and (x.requires_grad or weight.requires_grad or bias.requires_grad)
    if tracked or n * cin * kh * kw * ho * wo <= _IM2COL_LIMIT:
        cols = _im2col(xp, kh, kw, stride, 0, ho, wo)
        out = wm @ cols
    else:
        # inference on large inputs: unfold a band of output rows at a time
        cols = None
        rows = max(1, _IM2COL_LIMIT // (n * cin * kh * kw * wo))
        out = np.empty((n, cout, ho * wo), dtype=x.data.dtype)
        for r in range(0, ho, rows):
            r1 = min(ho, r + rows)
            out[:, :, r * wo : r1 * wo] = wm @ _im2col(xp, kh, kw, stride, r, r1, wo)
    out += bias.data[None, :, None]
    result = Tensor._from_op(out.reshape(n, cout, ho, wo), (x, weight, bias), "conv2d")

    def _bw(g, up):
        g2 = g.reshape(n, cout, ho * wo)
        if bias.requires_grad:
            _send(up, bias, g2.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
            _send(up, weight, gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = (wm.T @ g2).reshape(n, cin, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            _send(up, x, gxp)

    return _wire(result, _bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 2) -> Tensor:
    """Stride-2, 2x2 transposed convolution: [N,C,H,W] -> [N,Cout,2H,2W].

    ``weight`` is laid out [C, Cout, 2, 2]; output pixel (2h+i, 2w+j) receives
    ``sum_c x[c,h,w] * weight[c,:,i,j]``.
    """
    _check4(x, "conv_transpose2d input")
    _check4(weight, "conv_transpose2d weight")
    if stride != 2 or weight.shape[2:] != (2, 2):
        raise DimensionError("conv_transpose2d supports only 2x2 kernels with stride 2")
    n, c, h, w = x.shape
    wc, cout = weight.shape[:2]
    if wc != c:
        raise DimensionError(f"conv_transpose2d: input has {c} channels, weight expects {wc}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")

    xf = x.data.reshape(n, c, h * w)
    wm = weight.data.reshape(c, cout * 4)
    # [N, Cout*4, HW] -> [N, Cout, 2, 2, H, W] -> [N, Cout, H, 2, W, 2]
    y = (wm.T @ xf).reshape(n, cout, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3)
    y = y.reshape(n, cout, 2 * h, 2 * w) + bias.data[None, :, None, None]
    out = Tensor._from_op(np.ascontiguousarray(y), (x, weight, bias), "conv_transpose2d")

    def _bw(g, up):
        if bias.requires_grad:
            _send(up, bias, g.sum(axis=(0, 2, 3)))
        gr = np.ascontiguousarray(
            g.reshape(n, cout, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4)
        ).reshape(n, cout * 4, h * w)
        if weight.requires_grad:
            gw = np.tensordot(xf, gr, axes=([0, 2], [0, 2]))
            _send(up, weight, gw.reshape(weight.shape))
        if x.requires_grad:
            _send(up, x, (wm @ gr).reshape(x.shape))

    return _wire(out, _bw)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """2x2, stride-2 max pooling; ties route gradient to the first row-major max."""
    _check4(x, "maxpool2d input")
    if window != 2 or stride != 2:
        raise DimensionError("maxpool2d supports only window 2, stride 2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    out = Tensor._from_op(pooled, (x,), "maxpool2d")

    def _bw(g, up):
        gb = np.zeros(blocks.shape, dtype=x.data.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        _send(up, x, gx)

    return _wire(out, _bw)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Stack tensors along the channel axis, in argument order."""
    if not inputs:
        raise DimensionError("concat_channels needs at least one input")
    for t in inputs:
        _check4(t, "concat_channels input")
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(
                f"concat_channels: shape {t.shape} incompatible with {inputs[0].shape}"
            )
    if len(inputs) == 1:
        data = inputs[0].data.copy()
    else:
        data = np.concatenate([t.data for t in inputs], axis=1)
    out = Tensor._from_op(data, tuple(inputs), "concat_channels")
    offsets = np.cumsum([0] + [t.shape[1] for t in inputs])

    def _bw(g, up):
        for t, lo, hi in zip(inputs, offsets[:-1], offsets[1:]):
            _send(up, t, g[:, lo:hi])

    return _wire(out, _bw)
