"""Command-line entry points: train, eval, predict, data-stats.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (non-finite loss), 4 checkpoint integrity error.
"""

import argparse
import dataclasses
import sys

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_load, verify_architecture
from .config import RunConfig, load_config, parse_assignments
from .data import CLASS_NAMES, balance_classes, class_name, normalize, resize_bilinear, split
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    LabelError,
    NumericalError,
)
from .metrics import confusion, metrics, report_emit
from .model import forward
from .train import evaluate_split, load_sources, prepare_arrays, run_training, write_artifacts

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swinfer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ckpt=False):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (repeatable)")
        p.add_argument("--data", action="append", default=[],
                       help="data source: CSV, image dir, or synthetic:N (repeatable)")
        p.add_argument("--classes", type=int, choices=(7, 8),
                       help="label scheme: 7 or 8 classes")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--precision", type=int, choices=(32, 64),
                       help="floating-point mode")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint path")

    p_train = sub.add_parser("train", help="train a model and write checkpoints")
    common(p_train)
    p_train.add_argument("--out", help="output directory override")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval, ckpt=True)
    p_eval.add_argument("--split", default="test", choices=("train", "val", "test"),
                        help="which split of the data to evaluate (default test)")
    p_eval.add_argument("--format", default="table", choices=("table", "csv", "json"))
    p_eval.add_argument("--remap-8-to-7", action="store_true",
                        help="score an 8-class head on 7-class data by taking "
                             "the argmax over its first 7 logits (comparison mode)")

    p_pred = sub.add_parser("predict", help="classify a single image")
    common(p_pred, ckpt=True)
    p_pred.add_argument("image", help="path to an image file")

    p_stats = sub.add_parser("data-stats", help="class histograms before/after balancing")
    common(p_stats)
    p_stats.add_argument("--format", default="table", choices=("table", "csv"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfg = parse_assignments(overrides, cfg)
    if args.data:
        cfg.data_sources = tuple(args.data)
    if args.classes is not None:
        cfg.num_classes = args.classes
    if args.seed is not None:
        cfg.seed = args.seed
    if args.precision is not None:
        cfg.precision = args.precision
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    result = run_training(cfg)
    paths = write_artifacts(result, cfg)
    print(f"best epoch {result.best_epoch} (val acc {result.best_val_acc:.4f})")
    print(f"wrote {paths['curve']}, {paths['last']}, {paths['best']}")
    return EXIT_OK


def _load_eval_checkpoint(args):
    """Load a checkpoint and reconcile it with any CLI overrides."""
    ckpt = checkpoint_load(args.ckpt)
    verify_architecture(ckpt)
    remap = getattr(args, "remap_8_to_7", False)
    if remap and ckpt.config.num_classes != 8:
        raise ConfigError("--remap-8-to-7 needs an 8-class checkpoint")
    if (args.classes is not None and args.classes != ckpt.config.num_classes
            and not (remap and args.classes == 7)):
        raise ConfigError(
            f"checkpoint was trained with {ckpt.config.num_classes} classes, "
            f"--classes {args.classes} does not match"
        )
    for item in args.set:
        key, _, value = item.partition("=")
        if key.strip() == "use_se":
            requested = value.strip().lower() in ("true", "1", "yes")
            if requested != ckpt.config.use_se:
                raise ConfigError(
                    f"checkpoint has use_se={str(ckpt.config.use_se).lower()}; "
                    "refusing to evaluate with a mismatched flag"
                )
    T.set_precision(ckpt.config.precision if args.precision is None else args.precision)
    return ckpt


def cmd_eval(args) -> int:
    ckpt = _load_eval_checkpoint(args)
    cfg = ckpt.config
    remap = args.remap_8_to_7
    eval_classes = 7 if remap else cfg.num_classes
    if args.data:
        cfg.data_sources = tuple(args.data)
    if args.seed is not None:
        cfg.seed = args.seed
    data_cfg = cfg if not remap else dataclasses.replace(cfg, num_classes=7)
    manifest = load_sources(cfg.data_sources, data_cfg)
    split(manifest, cfg.split_fractions, cfg.seed)
    samples = manifest.subset(args.split)
    if not samples:
        raise DataError(f"no samples in the '{args.split}' split")
    images, labels = prepare_arrays(samples, cfg.image_size)
    loss, acc, preds = evaluate_split(ckpt.params, cfg.swin(), images, labels,
                                      cfg.batch_size,
                                      logit_limit=7 if remap else None)
    report = metrics(confusion(preds, labels, eval_classes))
    print(report_emit(report, args.format))
    return EXIT_OK


def cmd_predict(args) -> int:
    from PIL import Image

    ckpt = _load_eval_checkpoint(args)
    cfg = ckpt.config
    try:
        with Image.open(args.image) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise DataError(f"cannot decode image {args.image}: {exc}") from exc
    resized = resize_bilinear(rgb, cfg.image_size)
    with T.no_grad():
        logits, _ = forward(normalize(resized), ckpt.params, cfg.swin())
        probs = T.softmax(logits, axis=0).data
    winner = int(np.argmax(probs))
    print(class_name(winner))
    for i, p in enumerate(probs):
        print(f"  {class_name(i):<10} {p:.6f}")
    return EXIT_OK


def cmd_data_stats(args) -> int:
    cfg = resolve_config(args)
    if not cfg.data_sources:
        raise ConfigError("data-stats needs at least one --data source")
    manifest = load_sources(cfg.data_sources, cfg)
    before = manifest.class_counts()
    split(manifest, cfg.split_fractions, cfg.seed)
    balanced = balance_classes(manifest, cfg.seed)
    after = balanced.class_counts("train")
    names = CLASS_NAMES[: cfg.num_classes]
    split_counts = {s: balanced.class_counts(s) for s in ("train", "val", "test")}
    if args.format == "csv":
        print("class,before,after_balance,train,val,test")
        for i, name in enumerate(names):
            print(f"{name},{before[i]},{after[i]},{split_counts['train'][i]},"
                  f"{split_counts['val'][i]},{split_counts['test'][i]}")
    else:
        print(f"{'class':<10} {'before':>8} {'balanced':>9} {'train':>7} "
              f"{'val':>6} {'test':>6}")
        for i, name in enumerate(names):
            print(f"{name:<10} {before[i]:>8d} {after[i]:>9d} "
                  f"{split_counts['train'][i]:>7d} {split_counts['val'][i]:>6d} "
                  f"{split_counts['test'][i]:>6d}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "data-stats": cmd_data_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.precision is not None:
            T.set_precision(args.precision)
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LabelError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
