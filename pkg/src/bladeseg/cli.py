"""``bladeseg`` command line: gen, train, eval, kfold, infer, preview.

Settings come from three layers, later ones winning: built-in defaults, an
optional JSON config file (sections ``generation``, ``unet``, ``train``), and
command-line flags.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (generate_dataset, load_manifest, read_image_ppm, render_sample, split,
                      write_image_ppm, write_mask_pgm)
from .errors import BladeSegError, InvalidConfig, InvalidK, InvalidSpec
from .evaluate import cross_validate, evaluate
from .optim import LossKind, TrainConfig, history_csv, image_to_input, train
from .scene import GenerationConfig, sample_scene
from .unet import UNetConfig, load_model, save_model, unet_forward

log = logging.getLogger("bladeseg")

CONFIG_SECTIONS = ("generation", "unet", "train")


class UsageError(Exception):
    """Bad flags or config; reported with exit code 2."""


# ---------------------------------------------------------------- config

def load_config_file(path):
    if path is None:
        return {s: {} for s in CONFIG_SECTIONS}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"--config: {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_SECTIONS))
    if unknown:
        raise UsageError(f"--config: unknown section(s) {', '.join(unknown)}; "
                         f"expected {', '.join(CONFIG_SECTIONS)}")
    return {s: dict(raw.get(s, {})) for s in CONFIG_SECTIONS}


def _unet_from_dict(d):
    known = {f.name for f in fields(UNetConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise InvalidConfig(f"unknown unet keys: {', '.join(unknown)}")
    return UNetConfig(**d)


def _overrides(args, mapping):
    """{config field: flag value} for every flag the user actually gave."""
    return {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest, None) is not None}


def resolve_configs(args):
    """(GenerationConfig, UNetConfig, TrainConfig) after file + flag merging."""
    cfg = load_config_file(getattr(args, "config", None))
    gen = cfg["generation"] | _overrides(args, {"width": "width", "height": "height"})
    unet = cfg["unet"] | _overrides(args, {"depth": "depth", "base_channels": "base_channels"})
    tr = cfg["train"] | _overrides(args, {
        "epochs": "epochs", "lr": "learning_rate", "loss": "loss_kind", "seed": "seed",
        "init_seed": "init_seed", "threshold": "threshold", "flip": "flip_probability",
    })
    try:
        return (GenerationConfig.from_dict(gen).validate(), _unet_from_dict(unet).validate(),
                TrainConfig.from_dict(tr).validate())
    except (InvalidConfig, TypeError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- arg types

def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _probability_open(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"threshold must be in (0, 1), got {v}")
    return v


def _k(text):
    v = _nonneg_int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"k must be >= 2, got {v}")
    return v


# ---------------------------------------------------------------- parser

class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # None-defaulted flags state their effective default in their own help
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _defaulted(parser, *flags, default_shown, **kw):
    """Flag whose parsed default is None (so config files can fill it) but
    whose help still states the effective default."""
    kw["help"] = f"{kw.get('help', '')} (default: {default_shown})".strip()
    parser.add_argument(*flags, default=None, **kw)


def _common(p, threads=True, config=True):
    if config:
        p.add_argument("--config", metavar="FILE", default=None,
                       help="JSON config with generation/unet/train sections (default: none)")
    if threads:
        p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                       help="worker threads for rendering and evaluation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _net_flags(p):
    u, t = UNetConfig(), TrainConfig()
    _defaulted(p, "--depth", type=_positive_int, default_shown=u.depth, help="U-Net depth")
    _defaulted(p, "--base-channels", dest="base_channels", type=_positive_int,
               default_shown=u.base_channels, help="channels at the top level")
    _defaulted(p, "--epochs", type=_positive_int, default_shown=t.epochs, help="training epochs")
    _defaulted(p, "--lr", type=float, default_shown=t.learning_rate, help="Adam learning rate")
    _defaulted(p, "--loss", choices=[k.value for k in LossKind], default_shown=t.loss_kind,
               help="training loss")
    _defaulted(p, "--seed", type=_nonneg_int, default_shown=t.seed, help="shuffle/augmentation seed")
    _defaulted(p, "--init-seed", dest="init_seed", type=_nonneg_int, default_shown=t.init_seed,
               help="weight initialisation seed")
    _defaulted(p, "--flip", type=float, default_shown=t.flip_probability,
               help="horizontal flip probability")


def _split_flags(p):
    p.add_argument("--train-fraction", type=float, default=0.75, help="share of ids used for training")
    p.add_argument("--split-seed", type=_nonneg_int, default=0, help="seed of the train/test shuffle")


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="bladeseg", formatter_class=fmt,
                                     description="Synthetic blade-defect data and U-Net segmentation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", formatter_class=fmt, help="render a labelled dataset")
    g.add_argument("--out", required=True, metavar="DIR", help="output directory")
    g.add_argument("--count", type=int, default=642, help="number of samples")
    g.add_argument("--size", type=_size, default=None, metavar="WxH",
                   help="image size (default: 128x128, or the config file's width/height)")
    g.add_argument("--seed", type=_nonneg_int, default=0, help="master seed")
    _common(g)

    t = sub.add_parser("train", formatter_class=fmt, help="train a U-Net on a dataset split")
    t.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    t.add_argument("--out", required=True, metavar="FILE", help="model file to write")
    t.add_argument("--history", metavar="FILE", default=None,
                   help="history CSV path (default: <out>.history.csv)")
    _split_flags(t)
    _net_flags(t)
    _common(t, threads=False)

    e = sub.add_parser("eval", formatter_class=fmt, help="score a model on a dataset")
    e.add_argument("--model", required=True, metavar="FILE", help="trained model file")
    e.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    e.add_argument("--threshold", type=_probability_open, default=0.5, help="probability cut-off")
    e.add_argument("--subset", choices=("test", "train", "all"), default="test",
                   help="which side of the split to score")
    _split_flags(e)
    e.add_argument("--json", metavar="FILE", default=None, help="also write the report as JSON (default: none)")
    _common(e, config=False)

    k = sub.add_parser("kfold", formatter_class=fmt, help="k-fold cross-validation")
    k.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    k.add_argument("--k", type=_k, default=5, help="number of folds")
    k.add_argument("--fold-seed", type=_nonneg_int, default=0, help="seed of the fold shuffle")
    k.add_argument("--json", metavar="FILE", default=None, help="also write the report as JSON (default: none)")
    _net_flags(k)
    _common(k)

    i = sub.add_parser("infer", formatter_class=fmt, help="segment one PPM image")
    i.add_argument("--model", required=True, metavar="FILE", help="trained model file")
    i.add_argument("--image", required=True, metavar="FILE", help="P6 input image")
    i.add_argument("--out", required=True, metavar="FILE", help="P5 mask to write")
    i.add_argument("--threshold", type=_probability_open, default=0.5, help="probability cut-off")
    i.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = sub.add_parser("preview", formatter_class=fmt, help="render one scene and its mask")
    p.add_argument("--scene-seed", type=_nonneg_int, default=0, help="master seed of the scene")
    p.add_argument("--index", type=_nonneg_int, default=0, help="sample index under that seed")
    p.add_argument("--out", default="preview.ppm", metavar="FILE", help="P6 image to write")
    p.add_argument("--mask-out", metavar="FILE", default=None,
                   help="P5 mask path (default: <out> with .pgm suffix)")
    p.add_argument("--size", type=_size, default=None, metavar="WxH", help="image size (default: 128x128)")
    _common(p, threads=False)
    return parser


# ---------------------------------------------------------------- commands

def _ensure_parent(path):
    parent = Path(path).parent
    try:
        parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {parent}: {exc.strerror or exc}") from None


def _write(path, data: bytes):
    _ensure_parent(path)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from None


def _gen_config_with_size(args, gen):
    if args.size is not None:
        gen = replace(gen, width=args.size[0], height=args.size[1])
        try:
            gen.validate()
        except InvalidConfig as exc:
            raise UsageError(f"--size: {exc}") from None
    return gen


def cmd_gen(args):
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    gen, _, _ = resolve_configs(args)
    gen = _gen_config_with_size(args, gen)
    manifest = generate_dataset(gen, args.count, args.seed, args.out, threads=args.threads)
    print(Path(args.out) / "manifest.jsonl")
    for kind, n in sorted(manifest.kind_counts().items()):
        print(f"{kind:<14}{n:>6}")
    return 0


def _split_records(manifest, args, subset):
    train_ids, test_ids = split(manifest, args.train_fraction, args.split_seed)
    lookup = manifest.by_id()
    chosen = {"train": train_ids, "test": test_ids, "all": manifest.ids}[subset]
    return [lookup[s] for s in sorted(chosen)]


def _check_fraction(args):
    if not 0.0 < args.train_fraction < 1.0:
        raise UsageError(f"--train-fraction must be in (0, 1), got {args.train_fraction}")


def cmd_train(args):
    _check_fraction(args)
    _, unet_cfg, train_cfg = resolve_configs(args)
    manifest = load_manifest(args.data)
    train_recs = _split_records(manifest, args, "train")
    val_recs = _split_records(manifest, args, "test")
    result = train(train_recs, val_recs, unet_cfg, train_cfg, args.data)
    history_path = args.history or f"{args.out}.history.csv"
    _ensure_parent(args.out)
    save_model(result.params, args.out)
    _write(history_path, history_csv(result.history).encode("ascii"))
    last = result.history[-1]
    print(f"model    {args.out}")
    print(f"history  {history_path}")
    print(f"final    loss {last.train_loss:.5f}  val dice {last.val_dice:.4f}  "
          f"(best epoch {result.best_epoch})")
    return 0


def cmd_eval(args):
    _check_fraction(args)
    params = load_model(args.model)
    manifest = load_manifest(args.data)
    records = _split_records(manifest, args, args.subset)
    metrics = evaluate(params, records, args.data, args.threshold, threads=args.threads)
    print(metrics.table())
    if args.json:
        _write(args.json, (metrics.to_json(include_images=True) + "\n").encode("utf-8"))
    return 0


def cmd_kfold(args):
    _, unet_cfg, train_cfg = resolve_configs(args)
    manifest = load_manifest(args.data)
    if args.k > len(manifest.records):
        raise UsageError(f"--k {args.k} exceeds the {len(manifest.records)} samples in {args.data}")

    def report(fold):
        log.info("fold %d  dice %.4f", fold.fold, fold.metrics.mean_dice)

    cv = cross_validate(manifest, args.data, args.k, unet_cfg, train_cfg, args.fold_seed,
                        threads=args.threads, on_fold=report)
    print(cv.table())
    if args.json:
        _write(args.json, (json.dumps(cv.to_dict(), indent=2) + "\n").encode("utf-8"))
    return 0


def cmd_infer(args):
    params = load_model(args.model)
    try:
        rgb = read_image_ppm(Path(args.image).read_bytes())
    except OSError as exc:
        raise OSError(f"cannot read {args.image}: {exc.strerror or exc}") from None
    prob = unet_forward(params, image_to_input(rgb, params.dtype.type))[0]
    mask = np.where(prob > args.threshold, 255, 0).astype(np.uint8)
    _write(args.out, write_mask_pgm(mask))
    print(f"{args.out}  {int(np.count_nonzero(mask))} defect pixels of {mask.size}")
    return 0


def cmd_preview(args):
    gen, _, _ = resolve_configs(args)
    gen = _gen_config_with_size(args, gen)
    scene = sample_scene(args.scene_seed, args.index, gen)
    rgb, mask = render_sample(scene)
    mask_out = args.mask_out or str(Path(args.out).with_suffix(".pgm"))
    _write(args.out, write_image_ppm(rgb))
    _write(mask_out, write_mask_pgm(mask))
    print(f"{args.out}  {mask_out}  kind={scene.defect.kind.value}  "
          f"defect pixels={int(np.count_nonzero(mask))}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "kfold": cmd_kfold,
            "infer": cmd_infer, "preview": cmd_preview}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.exit(2, f"bladeseg {args.command}: error: {exc}\n")
    except (InvalidK, InvalidSpec) as exc:
        parser.exit(2, f"bladeseg {args.command}: error: {exc}\n")
    except (OSError, BladeSegError, ValueError) as exc:
        print(f"bladeseg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
