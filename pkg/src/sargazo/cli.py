"""``sargazo`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys

from .architectures import DISPLAY_NAMES, FAMILIES, parse_scale
from .errors import DivergenceError, SargazoError
from .experiments import (DESK_EPOCHS, DESK_INPUT_SIZE, DESK_SCALE, SOURCE_CLASSES, cmd_eval, cmd_gradcheck,
                          cmd_grid, cmd_predict, cmd_pretrain, cmd_stats, cmd_synth, cmd_train,
                          format_prediction, grid_text)
from .training import REGIME_TITLES, REGIMES, parse_regime

def _scale(text):
    try:
        return parse_scale(text)
    except SargazoError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p, arch=True, model=True):
    if arch:
        p.add_argument("--arch", choices=FAMILIES, required=True)
    p.add_argument("--seed", type=int, default=0)
    if model:
        p.add_argument("--scale", type=_scale, default=DESK_SCALE, help="width multiplier, e.g. 1/8 (default)")
        p.add_argument("--input-size", type=int, default=DESK_INPUT_SIZE)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG figures")


def _training(p, epochs=DESK_EPOCHS, lr=0.001, batch_size=100):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--augment", action="store_true", help="random horizontal flips during training")
    p.add_argument("--class-weighted", action="store_true", help="inverse-frequency class weights in the loss")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sargazo", description="Sargassum level classification experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for epochs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="train all 12 network/regime cells and write the accuracy table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", choices=FAMILIES, action="append", help="restrict to these families (repeatable)")
    p.add_argument("--regime", type=parse_regime, action="append", help="restrict to these regimes (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells (capped by SGZ_THREADS)")
    p.add_argument("--source-epochs", type=int, default=30, help="epochs for missing source checkpoints")
    _common(p, arch=False)
    _training(p)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--regime", type=parse_regime, default="TS", help="fe, ft or ts")
    p.add_argument("--source-ckpt", help="source checkpoint for fe/ft")
    _common(p)
    _training(p)

    p = sub.add_parser("eval", help="evaluate a trained model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    _common(p, arch=False, model=False)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image")

    p = sub.add_parser("stats", help="level and scene distribution of a manifest")
    p.add_argument("--manifest", required=True)
    _common(p, arch=False, model=False)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--arch", choices=FAMILIES, help="only the layer kinds this family uses")
    p.add_argument("--scale", type=_scale, default=DESK_SCALE)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="write a synthetic dataset of PPM scenes")
    p.add_argument("--task", default="level-5", help="level-5 or source-task-<k>")
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--input-size", type=int, default=DESK_INPUT_SIZE, help="image side in pixels")
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("pretrain", help="train a source checkpoint on the synthetic source task")
    p.add_argument("--classes", type=int, default=SOURCE_CLASSES)
    p.add_argument("--per-class", type=int, default=30)
    _common(p)
    _training(p, epochs=30, lr=0.01, batch_size=20)
    return parser


def _run(args) -> int:
    if args.command == "grid":
        families = tuple(f for f in FAMILIES if not args.arch or f in args.arch)
        regimes = tuple(r for r in REGIMES if not args.regime or r in args.regime)

        def progress(cell):
            acc = "failed" if cell.accuracy is None else f"{cell.accuracy:.4f}"
            print(f"{DISPLAY_NAMES[cell.family]:<10} {REGIME_TITLES[cell.regime]:<5} {acc:>7}  "
                  f"{cell.runtime:7.1f}s", flush=True)

        result = cmd_grid(args.manifest, args.out_dir, args.epochs, args.lr, args.batch_size, args.seed,
                          args.scale, args.input_size, families, regimes, args.augment, args.class_weighted,
                          args.jobs, args.figures, args.source_epochs, progress)
        print()
        print(grid_text(result, families, regimes), end="")
        return 0 if all(c.accuracy is not None for c in result.cells.values()) else 3

    if args.command == "train":
        run = cmd_train(args.manifest, args.arch, args.regime, args.out_dir, args.epochs, args.lr,
                        args.batch_size, args.seed, args.scale, args.input_size, args.source_ckpt,
                        args.augment, args.class_weighted, args.figures)
        print(f"best epoch {run.checkpoint.epoch}: val_accuracy {run.checkpoint.val_accuracy:.4f}, "
              f"adjacent_accuracy {run.report.adjacent_accuracy:.4f}")
        return 0

    if args.command == "eval":
        report = cmd_eval(args.manifest, args.checkpoint, args.out_dir, args.figures)
        print(f"accuracy {report.accuracy:.4f}, adjacent_accuracy {report.adjacent_accuracy:.4f}")
        return 0

    if args.command == "predict":
        label, probs = cmd_predict(args.checkpoint, args.image)
        print(format_prediction(label, probs))
        return 0

    if args.command == "stats":
        _, _, text = cmd_stats(args.manifest, args.out_dir, args.figures)
        print(text)
        return 0

    if args.command == "gradcheck":
        lines, ok = cmd_gradcheck(args.arch, args.scale, args.seed)
        print("\n".join(lines))
        return 0 if ok else 1

    if args.command == "synth":
        records = cmd_synth(args.out_dir, args.per_class, args.input_size, args.seed, args.task, args.label_noise)
        print(f"wrote {len(records)} images to {args.out_dir}")
        return 0

    if args.command == "pretrain":
        res = cmd_pretrain(args.arch, args.out_dir, args.seed, args.scale, args.input_size, args.classes,
                           args.per_class, args.epochs, args.lr, args.batch_size, args.figures)
        print(f"source val_accuracy {res.checkpoint.val_accuracy:.4f} at epoch {res.checkpoint.epoch}")
        return 0
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose < 2:
        logging.getLogger("sargazo.training").setLevel(max(level, logging.WARNING))
    try:
        return _run(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 2
    except (SargazoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
