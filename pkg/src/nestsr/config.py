"""Flat ``key = value`` run configuration covering every owned settings type."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .degrade import AugmentSpec, DegradeSpec
from .metrics import MetricConfig
from .phantom import PhantomSpec
from .training import TrainConfig
from .unetpp import UNetPPConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _dims(s: str) -> tuple[int, int]:
    w, sep, h = s.lower().partition("x")
    if not sep:
        raise ValueError(f"expected WIDTHxHEIGHT, got {s!r}")
    return int(w), int(h)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(","))


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _opt_dims(s: str) -> tuple[int, int] | None:
    return None if s.strip().lower() in ("", "auto", "none") else _dims(s)


def _opt_path(s: str) -> Path | None:
    return Path(s) if s.strip() else None


# key -> (parser, section)
KEYS = {
    "seed": (int, "run"),
    "data_dir": (_opt_path, "run"),
    "out_dir": (_opt_path, "run"),
    "phantom_count": (int, "run"),
    "phantom_size": (int, "run"),
    "head_init": (str, "run"),
    "factor_horizontal": (float, "degrade"),
    "factor_vertical": (float, "degrade"),
    "intermediate_dims": (_opt_dims, "degrade"),
    "output_dims": (_dims, "degrade"),
    "normalize_lo": (float, "degrade"),
    "normalize_hi": (float, "degrade"),
    "augment": (_bool, "degrade"),
    "aug_rotation_max_deg": (float, "aug"),
    "aug_translate_frac": (float, "aug"),
    "aug_scale_lo": (float, "aug"),
    "aug_scale_hi": (float, "aug"),
    "aug_blur_sigma_max": (float, "aug"),
    "aug_crop_frac": (float, "aug"),
    "levels": (int, "model"),
    "channels": (_ints, "model"),
    "nested": (_bool, "model"),
    "loss": (str, "train"),
    "learning_rate": (float, "train"),
    "weight_decay": (float, "train"),
    "weight_decay_mode": (str, "train"),
    "adam_beta1": (float, "train"),
    "adam_beta2": (float, "train"),
    "adam_eps": (float, "train"),
    "steps": (int, "train"),
    "batch_size": (int, "train"),
    "split_ratio": (float, "train"),
    "nlmse_epsilon": (float, "train"),
    "checkpoint_every": (int, "train"),
    "val_every": (int, "train"),
    "psnr_peak": (_opt_float, "metrics"),
    "ssim_window": (int, "metrics"),
    "ssim_sigma": (float, "metrics"),
    "ssim_k1": (float, "metrics"),
    "ssim_k2": (float, "metrics"),
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_dir: Path | None = None
    out_dir: Path | None = None
    phantom_count: int = 0
    phantom_size: int = 256
    head_init: str = "uniform"
    degrade: DegradeSpec = field(default_factory=DegradeSpec)
    model: UNetPPConfig = field(default_factory=UNetPPConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    @property
    def phantoms(self) -> PhantomSpec:
        return PhantomSpec(count=self.phantom_count, size=self.phantom_size, seed=self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            seed=seed,
            degrade=replace(self.degrade, seed=seed),
            train=replace(self.train, seed=seed),
        )


def parse_config(text: str) -> RunConfig:
    """Parse and validate; every problem is reported with its line number."""
    values: dict[str, object] = {}
    where: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
        where[key] = lineno

    def section(name):
        return {k: v for k, v in values.items() if KEYS[k][1] == name}

    def build(keys, fn):
        # attribute invariant failures to the first line of the owning section
        lines = [where[k] for k in keys if k in where]
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), min(lines) if lines else None) from None

    run = section("run")
    seed = int(run.get("seed", 0))

    aug_kw = section("aug")
    deg_kw = section("degrade")

    def make_degrade():
        augment = None
        if deg_kw.get("augment", False):
            kw = {}
            for name in ("rotation_max_deg", "translate_frac", "blur_sigma_max", "crop_frac"):
                if f"aug_{name}" in aug_kw:
                    kw[name] = aug_kw[f"aug_{name}"]
            if "aug_scale_lo" in aug_kw or "aug_scale_hi" in aug_kw:
                kw["scale_range"] = (aug_kw.get("aug_scale_lo", 0.95), aug_kw.get("aug_scale_hi", 1.05))
            augment = AugmentSpec(**kw)
        lo, hi = deg_kw.get("normalize_lo", -0.5), deg_kw.get("normalize_hi", 0.5)
        kw = {k: v for k, v in deg_kw.items() if k not in ("augment", "normalize_lo", "normalize_hi")}
        return DegradeSpec(normalize_range=(lo, hi), augment=augment, seed=seed, **kw)

    degrade = build(list(deg_kw) + list(aug_kw), make_degrade)
    model = build(list(section("model")), lambda: UNetPPConfig(**_model_kw(section("model"))))
    train = build(list(section("train")), lambda: TrainConfig(seed=seed, **section("train")))
    lo, hi = degrade.normalize_range
    metrics = build(
        list(section("metrics")), lambda: MetricConfig(ssim_dynamic_range=hi - lo, **section("metrics"))
    )

    head_init = run.get("head_init", "uniform")
    if head_init not in ("uniform", "zero"):
        raise ConfigError(f"head_init must be 'uniform' or 'zero', got {head_init!r}", where["head_init"])
    phantom_size = run.get("phantom_size", 256)
    if run.get("phantom_count", 0) < 0:
        raise ConfigError("phantom_count must be >= 0", where["phantom_count"])
    if phantom_size < 8:
        raise ConfigError("phantom_size must be >= 8", where["phantom_size"])
    if run.get("phantom_count", 0) > 0:
        if phantom_size % model.divisor:
            line = where.get("phantom_size")
            raise ConfigError(f"phantom_size {phantom_size} not divisible by {model.divisor}", line)
        if degrade.output_dims != (phantom_size, phantom_size):
            if "output_dims" in deg_kw:
                raise ConfigError("output_dims must equal phantom_size x phantom_size", where["output_dims"])
            degrade = replace(degrade, output_dims=(phantom_size, phantom_size))
    w, h = degrade.output_dims
    if w % model.divisor or h % model.divisor:
        raise ConfigError(
            f"output_dims {w}x{h} not divisible by {model.divisor} for a {model.levels}-level model",
            where.get("output_dims") or where.get("levels"),
        )

    return RunConfig(
        seed=seed,
        data_dir=run.get("data_dir"),
        out_dir=run.get("out_dir"),
        phantom_count=run.get("phantom_count", 0),
        phantom_size=phantom_size,
        head_init=head_init,
        degrade=degrade,
        model=model,
        train=train,
        metrics=metrics,
    )


def _model_kw(kw: dict) -> dict:
    kw = dict(kw)
    if "channels" in kw and "levels" not in kw:
        kw["levels"] = len(kw["channels"])
    return kw


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
