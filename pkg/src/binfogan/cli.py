"""Command line entry point: ``binfogan train | eval | sample``.

Exit codes: 0 ok, 1 unexpected error, 2 config, 3 numeric failure,
4 checkpoint/dataset incompatibility, 5 requested data unavailable.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import experiment
from ._io import atomic_write_text
from .checkpoint import load_checkpoint
from .config import load_config, with_overrides
from .errors import (
    BInfoGANError,
    CompatibilityError,
    ConfigError,
    FormatError,
    ShapeError,
)

log = logging.getLogger("binfogan")


def _config(path, args):
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return with_overrides(cfg, seed=args.seed, output_dir=args.output_dir)


def cmd_train(args):
    cfg = _config(args.config, args)
    echo = print if args.verbose else None
    state, reports = experiment.run_training(cfg, resume=args.resume, echo=echo)
    log.info("finished %d steps (step %d); outputs in %s", len(reports), state.step, cfg.output_dir)
    return 0


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, FormatError) as exc:
        raise CompatibilityError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_eval(args):
    ckpt = _load_ckpt(args.checkpoint)
    cfg = _config(args.config, args) if args.config else ckpt.config
    try:
        report = experiment.evaluate_checkpoint(ckpt, cfg, experiment.checkpoint_id(args.checkpoint))
    except ShapeError as exc:
        raise CompatibilityError(str(exc)) from None
    text = report.to_text()
    out = args.out or os.path.join(cfg.output_dir, "eval_report.json")
    atomic_write_text(out, text)
    print(f"accuracy {report.accuracy:.4f} on {report.num_images} images -> {out}")
    return 0


def cmd_sample(args):
    ckpt = _load_ckpt(args.checkpoint)
    cfg = _config(args.config, args) if args.config else with_overrides(ckpt.config, output_dir=args.output_dir)
    if args.mode == "category-rows":
        images, rows, cols = experiment.category_rows(ckpt, cfg, args.block, args.n, args.seed or 0)
    elif args.mode == "continuous-extremes":
        images, rows, cols, _ = experiment.continuous_extremes(ckpt, cfg, args.cont_index, args.m, args.block)
    else:
        images, rows, cols, _ = experiment.generator_sweep(ckpt, args.target, args.rows, args.n,
                                                           args.seed or 0)
    out = args.out or os.path.join(cfg.output_dir, "samples", f"{args.mode}.pgm")
    raster = experiment.write_grid(images, rows, cols, out)
    print(f"wrote {rows}x{cols} grid ({raster.shape[2]}x{raster.shape[1]} px) to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="binfogan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--output-dir", default=None)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cluster accuracy of a checkpoint's encoder")
    p.add_argument("checkpoint")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--out", default=None, help="report path (default <output_dir>/eval_report.json)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="write an image grid")
    p.add_argument("checkpoint")
    p.add_argument("mode", choices=("category-rows", "continuous-extremes", "generator-sweep"))
    p.add_argument("--config", default=None, help="dataset/eval settings (default: from checkpoint)")
    p.add_argument("--block", type=int, default=0)
    p.add_argument("--cont-index", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="images per row / sweep steps")
    p.add_argument("--m", type=int, default=None, help="extremes per end")
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--target", default="cat:0", help="sweep target, cat:<block> or cont:<index>")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BInfoGANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
