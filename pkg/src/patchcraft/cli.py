"""Command-line front end.

Subcommands: train, eval, sweep, compare, predict, plot. Exit codes: 0 on
success, 1 on runtime failure, 2 on usage errors (argparse default).

Flags may also come from a flat key=value config file via --config; explicit
flags win. PATCHCRAFT_SEED serves as the base-seed fallback when --seed is
not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import svgplot, sweep as sweep_mod, trainer, vit
from .autodiff import ShapeError
from .container import CheckpointError
from .data import (DatasetError, SplitError, compute_norm_stats, decode_image,
                   load_dataset, normalize, resize, stratified_split)
from .sweep import (DEFAULT_SPLIT_SEED, SweepGrid, read_sweep_csv, run_compare,
                    run_sweep, write_compare_csv)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PATCHCRAFT_SEED")
    return int(env) if env else 0


def _read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _add_model_args(sp, list_mode: bool = False):
    kind = _int_list if list_mode else int
    sp.add_argument("--patch", type=kind,
                    default=(8, 12, 16) if list_mode else 8,
                    help="patch size(s) in pixels")
    sp.add_argument("--heads", type=kind,
                    default=(2, 4, 8) if list_mode else 4,
                    help="attention head count(s)")
    sp.add_argument("--layers", type=kind,
                    default=(8, 12) if list_mode else 8,
                    help="encoder layer count(s)")
    sp.add_argument("--image-size", type=int, default=72, help="input side in pixels")
    sp.add_argument("--proj-dim", type=int, default=64, help="patch projection width")


def _add_train_args(sp):
    sp.add_argument("--epochs", type=int, default=25)
    sp.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    sp.add_argument("--batch", type=int, default=32, help="mini-batch size")
    sp.add_argument("--seed", type=int, default=None,
                    help="base seed (falls back to $PATCHCRAFT_SEED, then 0)")
    sp.add_argument("--split", type=float, default=0.2, help="test fraction")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="patchcraft",
        description="Vision-transformer image classification toolkit")
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    sp = sub.add_parser("train", help="train one ViT and write a checkpoint")
    sp.add_argument("--data", required=True, help="class-per-folder dataset directory")
    _add_model_args(sp)
    _add_train_args(sp)
    sp.add_argument("--out", default="vit.ckpt", help="checkpoint output path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    sp.add_argument("checkpoint")
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run the (layers x patch x heads) grid")
    sp.add_argument("--data", required=True)
    _add_model_args(sp, list_mode=True)
    _add_train_args(sp)
    sp.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    sp.add_argument("--out", default="sweep.csv", help="results CSV path")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="compare ViT variants against the SVM baseline")
    sp.add_argument("--data", required=True)
    _add_model_args(sp, list_mode=True)
    _add_train_args(sp)
    sp.add_argument("--sweep-csv", default=None,
                    help="pick best layers/heads per patch size from this sweep CSV")
    sp.add_argument("--svm-size", type=int, default=200,
                    help="SVM input side in pixels")
    sp.add_argument("--out", default="compare.csv", help="results CSV path")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("predict", help="classify one image with a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("image")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("plot", help="render a sweep CSV as an SVG accuracy plot")
    sp.add_argument("csv")
    sp.add_argument("--out", default="sweep.svg", help="SVG output path")
    sp.set_defaults(func=cmd_plot)

    for name, choice in sub.choices.items():
        subparsers[name] = choice
    return parser, subparsers


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    dataset = load_dataset(args.data)
    train_ds, test_ds = stratified_split(dataset, args.split, DEFAULT_SPLIT_SEED)
    model_cfg = vit.ViTConfig(image_size=args.image_size, patch_size=args.patch,
                              projection_dim=args.proj_dim, num_heads=args.heads,
                              num_layers=args.layers,
                              num_classes=len(dataset.class_names))
    train_cfg = trainer.TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                                    epochs=args.epochs, seed=seed)
    stats = compute_norm_stats(train_ds, model_cfg.image_size)
    params, report = trainer.train(model_cfg, train_cfg, train_ds, test_ds,
                                   norm_stats=stats)
    trainer.save_checkpoint(args.out, params, model_cfg, train_cfg,
                            dataset.class_names, stats)
    report_path = Path(args.out).with_suffix(".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"checkpoint: {args.out}")
    print(f"report: {report_path}")
    print(f"train accuracy: {report.final_train_accuracy:.4f}")
    if report.final_test_accuracy is not None:
        print(f"test accuracy: {report.final_test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    params, model_cfg, _, class_names, stats = trainer.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.class_names != class_names:
        raise DatasetError(
            f"dataset classes {dataset.class_names} do not match "
            f"checkpoint classes {class_names}")
    acc = trainer.evaluate(trainer.make_vit_logits_fn(params, model_cfg), dataset,
                           stats, model_cfg.image_size)
    print(f"accuracy: {acc:.4f} ({len(dataset)} images)")
    return 0


def cmd_sweep(args) -> int:
    grid = SweepGrid(data_dir=args.data, patch_sizes=args.patch, heads=args.heads,
                     layers=args.layers, image_size=args.image_size,
                     projection_dim=args.proj_dim, epochs=args.epochs,
                     learning_rate=args.lr, batch_size=args.batch,
                     split_fraction=args.split, base_seed=_resolve_seed(args))
    rows = run_sweep(grid, args.out, jobs=max(1, args.jobs),
                     log=lambda r: print(f"layers={r.layers} patch={r.patch_size} "
                                         f"heads={r.heads} -> {r.status}"))
    ok = sum(1 for r in rows if r.status == "ok")
    print(f"sweep: {ok}/{len(rows)} runs ok -> {args.out}")
    return 0 if ok == len(rows) else 1


def cmd_compare(args) -> int:
    grid = SweepGrid(data_dir=args.data, patch_sizes=args.patch, heads=args.heads,
                     layers=args.layers, image_size=args.image_size,
                     projection_dim=args.proj_dim, epochs=args.epochs,
                     learning_rate=args.lr, batch_size=args.batch,
                     split_fraction=args.split, base_seed=_resolve_seed(args))
    sweep_rows = read_sweep_csv(args.sweep_csv) if args.sweep_csv else None
    rows = run_compare(grid, sweep_rows, svm_feature_size=args.svm_size,
                       log=lambda r: print(f"{r.model}: {r.status}"))
    write_compare_csv(args.out, rows)
    for r in rows:
        train_acc = "-" if r.train_acc is None else f"{r.train_acc:.4f}"
        test_acc = "-" if r.test_acc is None else f"{r.test_acc:.4f}"
        print(f"{r.model:8s} train={train_acc} test={test_acc}")
    print(f"compare: -> {args.out}")
    return 0 if all(r.status == "ok" for r in rows) else 1


def cmd_predict(args) -> int:
    params, model_cfg, _, class_names, stats = trainer.load_checkpoint(args.checkpoint)
    image = decode_image(args.image)
    image = normalize(resize(image, model_cfg.image_size), stats)
    logits = vit.forward(image, params, model_cfg, mode="eval").data
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    print(f"prediction: {class_names[int(np.argmax(logits))]}")
    for name, p in zip(class_names, probs):
        print(f"  {name}: {p:.4f}")
    return 0


def cmd_plot(args) -> int:
    rows = read_sweep_csv(args.csv)
    svg = svgplot.render_sweep_svg(rows)
    Path(args.out).write_text(svg)
    print(f"plot: -> {args.out}")
    return 0


def _apply_config_file(subparsers: dict[str, argparse.ArgumentParser],
                       argv: list[str]) -> None:
    """Install key=value file entries as per-subcommand defaults; flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    raw = _read_config_file(known.config)
    known_dests = {a.dest for sp in subparsers.values() for a in sp._actions}
    unknown = raw.keys() - known_dests
    if unknown:
        raise ValueError(f"unknown config key(s) in {known.config}: {sorted(unknown)}")
    for sp in subparsers.values():
        defaults = {}
        for action in sp._actions:
            if action.dest in raw:
                caster = action.type or str
                defaults[action.dest] = caster(raw[action.dest])
        sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config_file(subparsers, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (DatasetError, SplitError, CheckpointError, ShapeError,
            vit.ConfigError, trainer.TrainingDiverged, sweep_mod.SweepCsvError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
