"""Command-line entry point: phantom, degrade, train, infer, eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .degrade import (
    AugmentSpec,
    DegenerateRangeError,
    DegradeSpec,
    bilinear_resize,
    denormalize,
    make_pair,
    normalize,
    sample_rng,
)
from .files import (
    FormatError,
    load_pairs,
    read_image,
    stem,
    write_fgrd,
    write_image,
    write_pair,
    write_png,
)
from .metrics import MetricConfig, evaluate
from .phantom import PhantomSpec, make_phantoms
from .tensor import DimensionError, Tensor
from .training import (
    CheckpointFormatError,
    NonFiniteLossError,
    load_checkpoint,
    split_dataset,
    train,
)
from .unetpp import UNetPPModel, super_resolve

log = logging.getLogger("nestsr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
IMAGE_EXTS = (".fgrd", ".png")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _dims(s: str) -> tuple[int, int]:
    w, sep, h = s.lower().partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {s!r}")
    return int(w), int(h)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=Path(args.out))
    return cfg


def _images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTS)


# -- commands ----------------------------------------------------------------


def cmd_phantom(args) -> int:
    if args.out is None:
        raise UsageError("phantom needs --out")
    out = Path(args.out)
    spec = PhantomSpec(count=args.count, size=args.size, seed=args.seed or 0)
    out.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(make_phantoms(spec)):
        write_fgrd(out / f"phantom_{k:04d}.fgrd", img.astype(np.float32))
        write_png(out / f"phantom_{k:04d}.png", img, lo=0.0, hi=1.0)
    log.info("wrote %d phantoms to %s", spec.count, out)
    return EXIT_OK


def _degrade_spec(args) -> DegradeSpec:
    spec = _run_config(args).degrade if args.config else DegradeSpec(seed=args.seed or 0)
    kw = {}
    if args.factor_h is not None:
        kw["factor_horizontal"] = args.factor_h
    if args.factor_v is not None:
        kw["factor_vertical"] = args.factor_v
    if args.size is not None:
        kw["output_dims"] = args.size
    if args.augment:
        kw["augment"] = spec.augment or AugmentSpec()
    if args.seed is not None:
        kw["seed"] = args.seed
    return replace(spec, **kw)


def cmd_degrade(args) -> int:
    if args.out is None:
        raise UsageError("degrade needs --out")
    spec = _degrade_spec(args)
    out = Path(args.out)
    by_stem: dict[str, Path] = {}
    # a .fgrd beats its .png preview
    for p in _images(Path(args.in_dir)):
        if stem(p) not in by_stem or p.suffix.lower() == ".fgrd":
            by_stem[stem(p)] = p
    inputs = [by_stem[k] for k in sorted(by_stem)]
    if not inputs:
        raise DataError(f"no .fgrd/.png images in {args.in_dir}")
    out.mkdir(parents=True, exist_ok=True)
    ok = 0
    rows = []
    for k, path in enumerate(inputs):
        name = stem(path)
        try:
            img = read_image(path)
            sample = make_pair(img, spec, sample_rng(spec.seed, k))
        except (FormatError, DimensionError) as exc:
            rows.append([name, "error", "", "", "", "", str(exc)])
            log.error("%s: %s", path.name, exc)
            continue
        write_pair(out, name, sample)
        iw, ih = sample.intermediate_dims
        h, w = sample.lf_bilinear.shape[2:]
        log.info("%s: intermediate %dx%d -> output %dx%d", name, iw, ih, w, h)
        rows.append([name, "ok", w, h, iw, ih, ""])
        ok += 1
    with (out / "manifest.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "status", "width", "height", "intermediate_width", "intermediate_height", "message"])
        writer.writerows(rows)
    if ok == 0:
        raise DataError("every input failed; see manifest.csv")
    return EXIT_OK


def build_dataset(cfg: RunConfig) -> list:
    """Pairs from ``data_dir`` if set, else freshly generated phantoms."""
    if cfg.data_dir is not None:
        pairs = load_pairs(cfg.data_dir)
        if not pairs:
            raise DataError(f"no paired samples in {cfg.data_dir}")
    elif cfg.phantom_count > 0:
        pairs = []
        for k, img in enumerate(make_phantoms(cfg.phantoms)):
            s = make_pair(Tensor(img[None, None]), cfg.degrade, sample_rng(cfg.seed, k))
            s.name = f"phantom_{k:04d}"
            pairs.append(s)
    else:
        raise ConfigError("set data_dir or phantom_count")
    div = cfg.model.divisor
    for s in pairs:
        h, w = s.lf_bilinear.shape[2:]
        if h % div or w % div:
            raise DimensionError(f"{s.name}: {w}x{h} is not divisible by {div} required by the model")
    return pairs


def model_label(cfg: RunConfig) -> str:
    return "SR U-Net++" if cfg.model.nested else "SR U-Net"


def run_training(cfg: RunConfig, out: Path, progress_every: int = 100):
    """split -> train -> evaluate; writes checkpoints, logs, report CSV and figures."""
    from . import plotting

    pairs = build_dataset(cfg)
    train_set, val_set = split_dataset(pairs, cfg.train.split_ratio, cfg.seed)
    model = UNetPPModel.init(cfg.model, seed=cfg.seed)
    model.normalize_range = cfg.degrade.normalize_range
    if cfg.head_init == "zero":
        model.zero_head()

    def on_step(step, loss):
        if progress_every and step % progress_every == 0:
            log.info("step %d/%d loss %.6g", step, cfg.train.steps, loss)

    out.mkdir(parents=True, exist_ok=True)
    state = train(model, train_set, cfg.train, val_set=val_set, out_dir=out,
                  metric_cfg=cfg.metrics, on_step=on_step)
    srs = [super_resolve(model, s.lf_bilinear) for s in val_set]
    report = evaluate(
        {model_label(cfg): srs},
        [s.hf for s in val_set],
        cfg.metrics,
        baseline=[s.lf_bilinear for s in val_set],
        names=[s.name or f"{k:04d}" for k, s in enumerate(val_set)],
    )
    (out / "report.csv").write_text(report.to_csv())
    (out / "per_image.csv").write_text(report.per_image_csv())
    plotting.plot_training(state.history, state.val_history, out / "training.png")
    plotting.plot_report(report, out / "report.png")
    if val_set:
        s = val_set[0]
        plotting.plot_comparison(s.lf_bilinear, srs[0], s.hf, out / "comparison.png", title=s.name)
    return model, state, report


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train needs --config")
    cfg = _run_config(args)
    out = cfg.out_dir or Path("run")
    _, _, report = run_training(cfg, out)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    img = read_image(args.input)
    lo, hi = model.normalize_range
    try:
        norm, params = normalize(img, lo, hi)
    except DegenerateRangeError as exc:
        raise DataError(str(exc)) from None
    if args.size is not None and args.size != (img.shape[3], img.shape[2]):
        norm = bilinear_resize(norm, args.size)
    sr = super_resolve(model, norm)
    result = denormalize(sr, params)
    write_image(args.output, result)
    log.info("wrote %s", args.output)
    return EXIT_OK


def _pick(paths: list[Path], prefer: tuple[str, ...]) -> dict[str, Path]:
    """One file per stem, choosing by pair-role preference (e.g. .sr before .hf)."""
    out: dict[str, tuple[int, Path]] = {}
    for p in paths:
        base = p.name.rsplit(".", 1)[0]
        role = base.rsplit(".", 1)[1] if "." in base else ""
        rank = prefer.index(role) if role in prefer else len(prefer)
        key = stem(p)
        if key not in out or rank < out[key][0]:
            out[key] = (rank, p)
    return {k: v[1] for k, v in out.items()}


def cmd_eval(args) -> int:
    preds = _pick(_images(Path(args.pred_dir)), ("sr", "", "hf", "lf", "res"))
    gts = _pick(_images(Path(args.gt_dir)), ("hf", "", "sr", "lf", "res"))
    common = sorted(set(preds) & set(gts))
    unmatched = sorted(set(preds) ^ set(gts))
    for name in unmatched:
        log.error("unmatched: %s", name)
    if not common:
        raise DataError("no file names shared between prediction and ground-truth directories")
    cfg = MetricConfig(psnr_peak=args.peak, ssim_dynamic_range=args.data_range)
    pred_imgs = [read_image(preds[n], np.float64) for n in common]
    gt_imgs = [read_image(gts[n], np.float64) for n in common]
    report = evaluate({args.label: pred_imgs}, gt_imgs, cfg, names=common)
    out = Path(args.out or "eval_report")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "per_image.csv").write_text(report.per_image_csv())
    from . import plotting

    plotting.plot_report(report, out / "report.png")
    sys.stdout.write(report.to_csv())
    return EXIT_DATA if unmatched else EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="nestsr", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("-v", "--verbose", action="store_true", default=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate synthetic head phantoms")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", parents=[common], help="build synthetic LF pairs from HF images")
    p.add_argument("in_dir")
    p.add_argument("--factor-h", type=float, default=None, help="horizontal (width) factor, default 1.5")
    p.add_argument("--factor-v", type=float, default=None, help="vertical (height) factor, default 5")
    p.add_argument("--size", type=_dims, default=None, help="expected input/output dims WxH")
    p.add_argument("--augment", action="store_true")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", parents=[common], help="train from a run configuration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="super-resolve one image")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--size", type=_dims, default=None, help="resize input to WxH before inference")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM report for matched image pairs")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--label", default="pred")
    p.add_argument("--peak", type=float, default=None, help="PSNR peak (default: GT dynamic range)")
    p.add_argument("--data-range", type=float, default=1.0, help="SSIM dynamic range L")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, FormatError, DimensionError, CheckpointFormatError, DegenerateRangeError,
            NonFiniteLossError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
