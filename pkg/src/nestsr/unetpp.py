"""Nested U-Net (U-Net++) for residual super-resolution.

Node ``(i, j)`` sits at encoder depth ``i`` and position ``j`` along the skip
pathway. Column ``j = 0`` is the encoder; every other node fuses all earlier
nodes on its row with the upsampled output of ``(i + 1, j - 1)``:

    x[i,0] = block(x_in)                      if i == 0
    x[i,0] = block(maxpool(x[i-1,0]))         otherwise
    x[i,j] = block(concat(x[i,0..j-1], up(x[i+1,j-1])))

With ``nested=False`` only the encoder column and the outer diagonal
``i + j == levels - 1`` are kept, which is the plain U-Net.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

__all__ = ["UNetPPConfig", "UNetPPModel", "forward", "node_forward", "super_resolve", "vgg_block"]

Node = tuple[int, int]


@dataclass(frozen=True)
class UNetPPConfig:
    levels: int = 5
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    in_channels: int = 1
    out_channels: int = 1
    nested: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if len(self.channels) != self.levels:
            raise ValueError(f"need {self.levels} channel widths, got {len(self.channels)}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channel widths must strictly increase: {self.channels}")
        if self.in_channels != 1 or self.out_channels != 1:
            raise ValueError("only single-channel input and output are supported")

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def nodes(self) -> list[Node]:
        """Node indices in a valid evaluation order (column by column)."""
        last = self.levels - 1
        out = []
        for j in range(self.levels):
            for i in range(self.levels - j):
                if self.nested or j == 0 or i + j == last:
                    out.append((i, j))
        return out

    def skip_inputs(self, i: int, j: int) -> list[Node]:
        """Same-row predecessors concatenated into node (i, j)."""
        have = set(self.nodes())
        return [(i, k) for k in range(j) if (i, k) in have]

    def block_in_channels(self, i: int, j: int) -> int:
        if j == 0:
            return self.in_channels if i == 0 else self.channels[i - 1]
        return (len(self.skip_inputs(i, j)) + 1) * self.channels[i]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class UNetPPModel:
    config: UNetPPConfig
    blocks: dict[Node, dict[str, Tensor]] = field(default_factory=dict)
    upsamplers: dict[Node, dict[str, Tensor]] = field(default_factory=dict)
    head: dict[str, Tensor] = field(default_factory=dict)
    normalize_range: tuple[float, float] = (-0.5, 0.5)

    @classmethod
    def init(cls, config: UNetPPConfig, seed: int = 0, dtype=None) -> "UNetPPModel":
        """Uniform(+-sqrt(1/fan_in)) weights, zero biases, drawn in node order."""
        rng = np.random.default_rng(seed)
        dtype = dtype or T.get_dtype()

        def param(arr):
            return Tensor(arr, requires_grad=True, dtype=dtype)

        model = cls(config)
        for i, j in config.nodes():
            cin = config.block_in_channels(i, j)
            cout = config.channels[i]
            model.blocks[(i, j)] = {
                "w1": param(_uniform(rng, (cout, cin, 3, 3), cin * 9)),
                "b1": param(np.zeros(cout)),
                "w2": param(_uniform(rng, (cout, cout, 3, 3), cout * 9)),
                "b2": param(np.zeros(cout)),
            }
            if j > 0:
                cdeep = config.channels[i + 1]
                model.upsamplers[(i, j)] = {
                    "w": param(_uniform(rng, (cdeep, cout, 2, 2), cdeep)),
                    "b": param(np.zeros(cout)),
                }
        c0 = config.channels[0]
        model.head = {
            "w": param(_uniform(rng, (config.out_channels, c0, 1, 1), c0)),
            "b": param(np.zeros(config.out_channels)),
        }
        return model

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Stable, human-readable parameter names in a fixed order."""
        out = []
        for (i, j), p in sorted(self.blocks.items()):
            out.extend((f"block.{i}.{j}.{k}", p[k]) for k in ("w1", "b1", "w2", "b2"))
        for (i, j), p in sorted(self.upsamplers.items()):
            out.extend((f"up.{i}.{j}.{k}", p[k]) for k in ("w", "b"))
        out.extend((f"head.{k}", self.head[k]) for k in ("w", "b"))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.parameters()]))

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def zero_head(self) -> None:
        for t in self.head.values():
            t.data[...] = 0

    def load_named(self, tensors: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = set(named) - set(tensors)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, t in named.items():
            arr = tensors[name]
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != model shape {t.shape}")
            t.data[...] = arr


def vgg_block(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """conv3x3 -> ReLU -> conv3x3 -> ReLU, padding 1, no normalization."""
    h = T.relu(T.conv2d(x, params["w1"], params["b1"], padding=1))
    return T.relu(T.conv2d(h, params["w2"], params["b2"], padding=1))


def node_forward(i: int, j: int, cache: dict[Node, Tensor], model: UNetPPModel, x_in: Tensor | None = None) -> Tensor:
    cfg = model.config
    if j == 0:
        if i == 0:
            src = x_in
        else:
            if (i - 1, 0) not in cache:
                raise RuntimeError(f"node ({i},0) evaluated before ({i - 1},0)")
            src = T.maxpool2d(cache[(i - 1, 0)])
        return vgg_block(src, model.blocks[(i, 0)])
    deps = cfg.skip_inputs(i, j) + [(i + 1, j - 1)]
    for d in deps:
        if d not in cache:
            raise RuntimeError(f"node ({i},{j}) evaluated before its input {d}")
    up = model.upsamplers[(i, j)]
    upsampled = T.conv_transpose2d(cache[(i + 1, j - 1)], up["w"], up["b"])
    fused = T.concat_channels([cache[d] for d in deps[:-1]] + [upsampled])
    return vgg_block(fused, model.blocks[(i, j)])


def forward(model: UNetPPModel, lf: Tensor, trace: list[Node] | None = None) -> Tensor:
    """Predicted residual for ``lf`` [N,1,H,W]; output has the input's shape."""
    cfg = model.config
    if lf.data.ndim != 4 or lf.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected [N,{cfg.in_channels},H,W] input, got {lf.shape}")
    h, w = lf.shape[2:]
    if h % cfg.divisor or w % cfg.divisor:
        raise DimensionError(
            f"input {h}x{w} must be divisible by {cfg.divisor} for a {cfg.levels}-level model"
        )
    cache: dict[Node, Tensor] = {}
    for i, j in cfg.nodes():
        cache[(i, j)] = node_forward(i, j, cache, model, lf)
        if trace is not None:
            trace.append((i, j))
    top = cache[(0, cfg.levels - 1)]
    return T.conv2d(top, model.head["w"], model.head["b"], padding=0)


def super_resolve(model: UNetPPModel, lf: Tensor, clamp: tuple[float, float] | None = None) -> Tensor:
    """LF input plus predicted residual, clamped to the normalization range."""
    clamp = model.normalize_range if clamp is None else clamp
    with T.no_grad():
        residual = forward(model, lf)
    sr = np.clip(lf.data + residual.data, clamp[0], clamp[1])
    return Tensor(sr, dtype=lf.dtype)
