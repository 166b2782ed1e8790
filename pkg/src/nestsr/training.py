"""Losses, Adam with L2 or decoupled weight decay, the residual training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .degrade import PairedSample
from .metrics import MetricConfig, psnr, ssim
from .tensor import DimensionError, Tensor
from .unetpp import UNetPPConfig, UNetPPModel, forward, super_resolve

__all__ = [
    "CheckpointFormatError",
    "NonFiniteLossError",
    "TrainConfig",
    "TrainState",
    "adam_step",
    "load_checkpoint",
    "mse_loss",
    "nlmse_loss",
    "save_checkpoint",
    "split_dataset",
    "train",
]

log = logging.getLogger(__name__)

MAGIC = b"NUSR"
VERSION = 1


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "nlmse"
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    weight_decay_mode: str = "decoupled"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 60000
    batch_size: int = 1
    split_ratio: float = 0.75
    seed: int = 0
    nlmse_epsilon: float = 1e-12
    checkpoint_every: int = 0
    val_every: int = 0

    def __post_init__(self):
        if self.loss not in ("mse", "nlmse"):
            raise ValueError(f"loss must be 'mse' or 'nlmse', got {self.loss!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.weight_decay_mode not in ("coupled", "decoupled"):
            raise ValueError(f"weight_decay_mode must be 'coupled' or 'decoupled', got {self.weight_decay_mode!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.nlmse_epsilon <= 0:
            raise ValueError("nlmse_epsilon must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ValueError("invalid Adam hyperparameters")


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: list[tuple[int, float]] = field(default_factory=list)
    val_history: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_step: int = -1


# -- losses ------------------------------------------------------------------


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_pair(pred, target)
    return T.mean(T.square(T.sub(pred, target)))


def nlmse_loss(pred: Tensor, target: Tensor, epsilon: float = 1e-12) -> Tensor:
    """(1/n) * ln(sum((pred - target)^2) + epsilon)."""
    _check_pair(pred, target)
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    sse = T.sum(T.square(T.sub(pred, target)))
    floor = Tensor(epsilon, dtype=sse.dtype)
    return T.mul_scalar(T.log(T.add(sse, floor)), 1.0 / pred.size)


def loss_fn(cfg: TrainConfig) -> Callable[[Tensor, Tensor], Tensor]:
    if cfg.loss == "mse":
        return mse_loss
    return lambda p, t: nlmse_loss(p, t, cfg.nlmse_epsilon)


# -- optimizer ---------------------------------------------------------------


def adam_step(named_params: Sequence[tuple[str, Tensor]], state: TrainState, cfg: TrainConfig) -> None:
    """One Adam update with bias correction, updating parameters in place.

    ``coupled`` decay adds ``weight_decay * theta`` to the gradient before the
    moments (classic L2). ``decoupled`` shrinks ``theta`` by
    ``lr * weight_decay`` outside the adaptive step, as in AdamW.
    """
    for name, p in named_params:
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
    state.step += 1
    t = state.step
    coupled = cfg.weight_decay_mode == "coupled"
    for name, p in named_params:
        dt = p.data.dtype.type
        g = p.grad
        if coupled and cfg.weight_decay:
            g = g + dt(cfg.weight_decay) * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= dt(cfg.adam_beta1)
        m += dt(1 - cfg.adam_beta1) * g
        v *= dt(cfg.adam_beta2)
        v += dt(1 - cfg.adam_beta2) * (g * g)
        m_hat = m / dt(1 - cfg.adam_beta1**t)
        v_hat = v / dt(1 - cfg.adam_beta2**t)
        if not coupled and cfg.weight_decay:
            p.data *= dt(1 - cfg.learning_rate * cfg.weight_decay)
        p.data -= dt(cfg.learning_rate) * m_hat / (np.sqrt(v_hat) + dt(cfg.adam_eps))


# -- data --------------------------------------------------------------------


def split_dataset(samples: Sequence, ratio: float = 0.75, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; the train part gets round(ratio * N) items."""
    n = len(samples)
    if n < 4:
        raise ValueError(f"need at least 4 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    return [samples[k] for k in order[:n_train]], [samples[k] for k in order[n_train:]]


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def _as_batch(img: Tensor, dtype) -> Tensor:
    return Tensor(img.data, dtype=dtype)


def validate(model: UNetPPModel, val: Sequence[PairedSample], cfg: TrainConfig,
             metric_cfg: MetricConfig) -> tuple[float, float, float]:
    """(mean loss, mean PSNR, mean SSIM) of super-resolved outputs on ``val``."""
    lossf = loss_fn(cfg)
    dtype = model.parameters()[0].dtype
    losses, ps, ss = [], [], []
    with T.no_grad():
        for s in val:
            lf = _as_batch(s.lf_bilinear, dtype)
            pred = forward(model, lf)
            losses.append(lossf(pred, _as_batch(s.residual_target, dtype)).item())
            sr = super_resolve(model, lf)
            p = psnr(sr, s.hf, metric_cfg)
            ps.append(p if math.isfinite(p) else np.nan)
            ss.append(ssim(sr, s.hf, metric_cfg))
    return float(np.mean(losses)), float(np.nanmean(ps)), float(np.mean(ss))


def train(
    model: UNetPPModel,
    train_set: Sequence[PairedSample],
    cfg: TrainConfig,
    state: TrainState | None = None,
    val_set: Sequence[PairedSample] = (),
    out_dir: str | Path | None = None,
    metric_cfg: MetricConfig = MetricConfig(),
    on_step: Callable[[int, float], None] | None = None,
) -> TrainState:
    """Run optimizer steps until ``state.step == cfg.steps``.

    Sample order is a per-epoch permutation seeded from ``(cfg.seed, epoch)``,
    so a resumed state continues exactly where an uninterrupted run would.
    """
    if state is None:
        state = TrainState(rng=np.random.default_rng(cfg.seed))
    if cfg.steps > state.step and not train_set:
        raise ValueError("training set is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        train_log = (out / "train_log.csv").open("a")
        val_log = (out / "val_log.csv").open("a")
        if train_log.tell() == 0:
            train_log.write("step,loss,lr\n")
        if val_log.tell() == 0:
            val_log.write("step,val_psnr,val_ssim\n")
    named = model.named_parameters()
    dtype = named[0][1].dtype
    lossf = loss_fn(cfg)
    n = len(train_set)
    try:
        while state.step < cfg.steps:
            epoch, pos = divmod(state.step, n)
            sample = train_set[_epoch_order(cfg.seed, epoch, n)[pos]]
            model.zero_grad()
            pred = forward(model, _as_batch(sample.lf_bilinear, dtype))
            loss = lossf(pred, _as_batch(sample.residual_target, dtype))
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(f"non-finite loss {value} at step {state.step + 1}")
            T.backward(loss)
            adam_step(named, state, cfg)
            state.history.append((state.step, value))
            if out is not None:
                train_log.write(f"{state.step},{value:.9g},{cfg.learning_rate:g}\n")
            if on_step is not None:
                on_step(state.step, value)
            if cfg.val_every and val_set and state.step % cfg.val_every == 0:
                vloss, vp, vs = validate(model, val_set, cfg, metric_cfg)
                state.val_history.append((state.step, vloss, vp, vs))
                log.info("step %d val loss %.6g psnr %.3f ssim %.4f", state.step, vloss, vp, vs)
                if out is not None:
                    val_log.write(f"{state.step},{vp:.6f},{vs:.6f}\n")
                if vloss < state.best_val_loss:
                    state.best_val_loss, state.best_step = vloss, state.step
                    if out is not None:
                        save_checkpoint(model, state, out / "best.nusr", cfg)
            if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(model, state, out / f"step_{state.step:07d}.nusr", cfg)
    finally:
        if out is not None:
            train_log.close()
            val_log.close()
    if out is not None:
        save_checkpoint(model, state, out / "final.nusr", cfg)
    return state


# -- checkpoints -------------------------------------------------------------
#
# layout (little-endian):
#   b"NUSR" | u16 version
#   u32 len | config text (key = value lines, UTF-8)
#   tensor table, then optimizer table, each:
#       u32 count, entries of: u16 name len | name | u8 ndim | u32 dims... |
#       f32 data | u32 crc32(name..data)
#   u64 step | u32 len | rng state (JSON)
#   u32 crc32 of everything before it


def _config_text(model_cfg: UNetPPConfig, train_cfg: TrainConfig | None, state: TrainState,
                 normalize_range: tuple[float, float]) -> str:
    items = {
        "levels": model_cfg.levels,
        "channels": ",".join(str(c) for c in model_cfg.channels),
        "in_channels": model_cfg.in_channels,
        "out_channels": model_cfg.out_channels,
        "nested": str(model_cfg.nested).lower(),
    }
    if train_cfg is not None:
        for f in fields(train_cfg):
            items[f"train.{f.name}"] = repr(getattr(train_cfg, f.name))
    items["normalize_range"] = ",".join(repr(float(v)) for v in normalize_range)
    items["best_val_loss"] = repr(state.best_val_loss)
    items["best_step"] = state.best_step
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _parse_config_text(text: str) -> tuple[UNetPPConfig, TrainConfig | None, dict]:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition(" = ")
            kv[k] = v
    model_cfg = UNetPPConfig(
        levels=int(kv["levels"]),
        channels=tuple(int(c) for c in kv["channels"].split(",")),
        in_channels=int(kv["in_channels"]),
        out_channels=int(kv["out_channels"]),
        nested=kv["nested"] == "true",
    )
    tkw = {}
    for f in fields(TrainConfig):
        key = f"train.{f.name}"
        if key in kv:
            raw = kv[key]
            tkw[f.name] = raw.strip("'") if f.type == "str" else (
                int(raw) if f.type == "int" else float(raw)
            )
    train_cfg = TrainConfig(**tkw) if tkw else None
    return model_cfg, train_cfg, kv


def _pack_table(named: Sequence[tuple[str, np.ndarray]]) -> bytes:
    parts = [struct.pack("<I", len(named))]
    for name, arr in named:
        raw_name = name.encode("utf-8")
        entry = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
        entry += struct.pack(f"<{arr.ndim}I", *arr.shape)
        entry += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        parts.append(entry + struct.pack("<I", zlib.crc32(entry)))
    return b"".join(parts)


def encode_checkpoint(model: UNetPPModel, state: TrainState, train_cfg: TrainConfig | None = None) -> bytes:
    cfg_text = _config_text(model.config, train_cfg, state, model.normalize_range).encode("utf-8")
    params = [(n, t.data) for n, t in model.named_parameters()]
    opt = [(f"m/{k}", state.m[k]) for k in sorted(state.m)] + [(f"v/{k}", state.v[k]) for k in sorted(state.v)]
    rng = json.dumps(state.rng.bit_generator.state, sort_keys=True).encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<I", len(cfg_text)),
        cfg_text,
        _pack_table(params),
        _pack_table(opt),
        struct.pack("<Q", state.step),
        struct.pack("<I", len(rng)),
        rng,
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: UNetPPModel, state: TrainState, path: str | Path,
                    train_cfg: TrainConfig | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(model, state, train_cfg))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def table(self, what: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{what} count")
        out = {}
        for _ in range(count):
            start = self.pos
            (nlen,) = self.unpack("<H", f"{what} name length")
            try:
                name = self.take(nlen, f"{what} name").decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointFormatError(f"{what}: undecodable tensor name", start) from None
            (ndim,) = self.unpack("<B", f"{what} ndim")
            if ndim > 8:
                raise CheckpointFormatError(f"{what} entry {name!r}: implausible ndim {ndim}", start)
            dims = self.unpack(f"<{ndim}I", f"{what} dims")
            size = int(np.prod(dims, dtype=np.int64))
            data = self.take(4 * size, f"{what} data for {name!r}")
            entry = self.buf[start : self.pos]
            (crc,) = self.unpack("<I", f"{what} checksum")
            if zlib.crc32(entry) != crc:
                raise CheckpointFormatError(f"{what} entry {name!r}: checksum mismatch", start)
            out[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
        return out


def decode_checkpoint(buf: bytes, dtype=None) -> tuple[UNetPPModel, TrainState, TrainConfig | None]:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic, not a NUSR checkpoint", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    (clen,) = r.unpack("<I", "config length")
    cstart = r.pos
    try:
        model_cfg, train_cfg, kv = _parse_config_text(r.take(clen, "config").decode("utf-8"))
    except CheckpointFormatError:
        raise
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"malformed config block: {exc}", cstart) from None
    params = r.table("tensor table")
    opt = r.table("optimizer table")
    (step,) = r.unpack("<Q", "step")
    (rlen,) = r.unpack("<I", "rng length")
    rstart = r.pos
    rng_raw = r.take(rlen, "rng state")
    body_end = r.pos
    (crc,) = r.unpack("<I", "file checksum")
    if zlib.crc32(buf[:body_end]) != crc:
        raise CheckpointFormatError("file checksum mismatch", body_end)
    if r.pos != len(buf):
        raise CheckpointFormatError("trailing bytes after checkpoint", r.pos)
    try:
        bit_gen = np.random.PCG64()
        bit_gen.state = json.loads(rng_raw)
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointFormatError(f"bad rng state: {exc}", rstart) from None

    dtype = dtype or T.get_dtype()
    model = UNetPPModel.init(model_cfg, seed=0, dtype=dtype)
    if "normalize_range" in kv:
        try:
            lo, hi = (float(v) for v in kv["normalize_range"].split(","))
        except ValueError:
            raise CheckpointFormatError("malformed normalize_range", cstart) from None
        model.normalize_range = (lo, hi)
    try:
        model.load_named(params)
    except (KeyError, DimensionError) as exc:
        raise CheckpointFormatError(f"tensor table does not match config: {exc}", cstart) from None
    state = TrainState(
        step=step,
        m={k[2:]: v.astype(dtype) for k, v in opt.items() if k.startswith("m/")},
        v={k[2:]: v.astype(dtype) for k, v in opt.items() if k.startswith("v/")},
        rng=np.random.Generator(bit_gen),
        best_val_loss=float(kv.get("best_val_loss", "inf")),
        best_step=int(kv.get("best_step", -1)),
    )
    return model, state, train_cfg


def load_checkpoint(path: str | Path, dtype=None) -> tuple[UNetPPModel, TrainState, TrainConfig | None]:
    return decode_checkpoint(Path(path).read_bytes(), dtype)
