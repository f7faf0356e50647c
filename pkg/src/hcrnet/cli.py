"""Command line front end.

Subcommands: train, evaluate, analyze, preview-augment, export-info.
Exit codes: 0 success, 1 usage errors, 2 data/format problems,
3 numeric failures (non-finite values mid-computation).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import network as net
from .augment import AugmentConfig, apply_affine, sample_affine
from .data import LabeledDataset, load_idx, load_image_dir, load_stroke_dir, split_dataset
from .errors import DataError, FormatError, NumericError, ShapeError, UsageError
from .optim import default_schedules
from .tensor import derive_rng
from .training import (
    PhasePlan,
    evaluate,
    misclassification_report,
    run_experiment,
    write_confusion_csv,
    write_history_csv,
    write_metrics_csv,
)
from .weights import load_checkpoint, read_archive, save_checkpoint, write_archive


class _Parser(argparse.ArgumentParser):
    # argparse would call sys.exit(2); route through the exit-code map instead
    def error(self, message):
        raise UsageError(message)


def _add_source_args(p, prefix=""):
    dash = f"--{prefix}" if prefix else "--"
    p.add_argument(f"{dash}idx-images", metavar="FILE")
    p.add_argument(f"{dash}idx-labels", metavar="FILE")
    p.add_argument(f"{dash}images-dir", metavar="DIR")
    p.add_argument(f"{dash}strokes-dir", metavar="DIR")


def _load_source(args, prefix=""):
    """Load one dataset from whichever source flags were given, or None."""
    g = lambda name: getattr(args, f"{prefix}{name}".replace("-", "_"))
    picked = [s for s in ("idx-images", "images-dir", "strokes-dir") if g(s)]
    if not picked:
        return None
    if len(picked) > 1:
        raise UsageError(f"pick one input source, not {' and '.join(picked)}")
    if picked[0] == "idx-images":
        if not g("idx-labels"):
            raise UsageError("IDX images need a matching labels file")
        return load_idx(g("idx-images"), g("idx-labels"))
    if g("idx-labels"):
        raise UsageError("IDX labels given without IDX images")
    if picked[0] == "images-dir":
        return load_image_dir(g("images-dir"), auto_invert=not args.no_auto_invert)
    return load_stroke_dir(g("strokes-dir"))


def _align_test(train_set, test_set):
    """Remap an explicit test set onto the training class table by name."""
    if test_set.class_names == train_set.class_names:
        return test_set
    index = {n: i for i, n in train_set.class_names.items()}
    try:
        labels = np.asarray([index[test_set.class_names[int(l)]] for l in test_set.labels])
    except KeyError as exc:
        raise DataError(f"test class {exc} is absent from the training set") from exc
    return LabeledDataset(test_set.images, labels, dict(train_set.class_names))


def _with_classes(ds, k):
    if k < ds.num_classes:
        raise UsageError(f"--classes {k} is below the {ds.num_classes} classes present")
    names = {i: ds.class_names.get(i, str(i)) for i in range(k)}
    return LabeledDataset(ds.images, ds.labels, names)


def _require_dataset(args, prefix=""):
    ds = _load_source(args, prefix)
    if ds is None:
        raise UsageError("no input source given (--idx-images/--images-dir/--strokes-dir)")
    return ds


def _graph_from_checkpoint(path):
    archive = read_archive(path)
    if "dense_2.bias" not in archive:
        raise FormatError(f"{path} is not a model checkpoint (dense_2.bias missing)")
    k = int(np.prod(archive["dense_2.bias"].shape))
    g = net.build_hcrnet(k, seed=0)
    load_checkpoint(g, archive)
    return g


def _augment_config(args):
    return AugmentConfig(
        rotation_deg=args.rotation,
        shift_frac=args.shift,
        shear=args.shear,
        zoom_frac=args.zoom,
        enabled=args.augment,
    )


def _cmd_train(args):
    t0 = time.time()
    train_set = _require_dataset(args)
    test_set = _load_source(args, "test-")
    if test_set is None:
        train_set, test_set = split_dataset(train_set, args.split, args.split_seed)
    else:
        test_set = _align_test(train_set, test_set)
    if args.classes is not None:
        train_set = _with_classes(train_set, args.classes)
        test_set = _with_classes(test_set, args.classes)
    plan = PhasePlan(
        epochs_phase1=args.epochs1,
        epochs_phase2=args.epochs2,
        augment=_augment_config(args),
        batch_size=args.batch_size,
        seed=args.seed,
    )
    pretrained = read_archive(args.pretrained) if args.pretrained else None
    os.makedirs(args.out_dir, exist_ok=True)
    last = {}

    def persist(r, g, report):
        if args.runs > 1:
            write_archive(save_checkpoint(g), os.path.join(args.out_dir, f"checkpoint_run{r}.hcrw"))
            write_history_csv(report.history, os.path.join(args.out_dir, f"history_run{r}.csv"))
        last["graph"], last["report"] = g, report

    run_seeds = [args.seed] if args.runs == 1 else None
    summary, _ = run_experiment(
        train_set, test_set, plan,
        runs=args.runs, run_seeds=run_seeds, pretrained=pretrained, on_run=persist,
    )
    g, report = last["graph"], last["report"]
    write_archive(save_checkpoint(g), os.path.join(args.out_dir, "checkpoint.hcrw"))
    write_history_csv(report.history, os.path.join(args.out_dir, "history.csv"))
    write_metrics_csv(report, test_set.class_names, os.path.join(args.out_dir, "metrics.csv"))
    write_confusion_csv(report.confusion, test_set.class_names, os.path.join(args.out_dir, "confusion.csv"))
    doc = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "num_classes": train_set.num_classes,
        "train_samples": len(train_set),
        "test_samples": len(test_set),
        "plan": {
            "epochs_phase1": plan.epochs_phase1,
            "epochs_phase2": plan.epochs_phase2,
            "batch_size": plan.batch_size,
            "seed": plan.seed,
            "augment": vars(plan.augment),
        },
        "schedules": {
            phase: default_schedules(phase, epochs).breakpoints
            for phase, epochs in (("phase1", plan.epochs_phase1), ("phase2", plan.epochs_phase2))
            if epochs > 0
        },
        "runs": summary,
        "pretrained": args.pretrained,
        "elapsed_seconds": round(time.time() - t0, 3),
    }
    with open(os.path.join(args.out_dir, "summary.json"), "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    acc = summary["mean"]["accuracy_last_epoch"]
    spread = summary["std"]["accuracy_last_epoch"]
    print(f"last-epoch accuracy {acc:.4f} (std {spread:.4f} over {args.runs} run(s))")
    print(f"artifacts in {args.out_dir}")


def _cmd_evaluate(args):
    g = _graph_from_checkpoint(args.checkpoint)
    ds = _require_dataset(args)
    if int(ds.labels.max()) >= g.num_classes:
        raise DataError(f"dataset has label {int(ds.labels.max())} but the model has {g.num_classes} classes")
    report = evaluate(g, ds)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        write_metrics_csv(report, ds.class_names, os.path.join(args.out_dir, "metrics.csv"))
        write_confusion_csv(report.confusion, ds.class_names, os.path.join(args.out_dir, "confusion.csv"))
    print(f"accuracy {report.accuracy_last_epoch:.4f}")
    print(f"macro precision {report.macro_precision:.4f}  recall {report.macro_recall:.4f}  f1 {report.macro_f1:.4f}")


def _cmd_analyze(args):
    g = _graph_from_checkpoint(args.checkpoint)
    ds = _require_dataset(args)
    if int(ds.labels.max()) >= g.num_classes:
        raise DataError(f"dataset has label {int(ds.labels.max())} but the model has {g.num_classes} classes")
    result = misclassification_report(g, ds, args.out_dir)
    print(f"{result['misclassified']} of {result['total']} misclassified; details in {result['out_dir']}")


def _cmd_preview_augment(args):
    from PIL import Image

    ds = _require_dataset(args)
    if not 0 <= args.index < len(ds):
        raise UsageError(f"--index {args.index} outside dataset of {len(ds)} samples")
    cfg = AugmentConfig(args.rotation, args.shift, args.shear, args.zoom, enabled=True)
    img = ds.images[args.index]
    os.makedirs(args.out_dir, exist_ok=True)
    tiles = [img]
    for i in range(args.count):
        t = sample_affine(cfg, derive_rng(args.seed, i))
        out = apply_affine(img, t).data
        tiles.append(out)
        pixels = np.rint(out[:, :, 0] * 255.0).astype(np.uint8)
        Image.fromarray(pixels, mode="L").save(os.path.join(args.out_dir, f"variant_{i}.png"))
    cols = len(tiles)
    sheet = np.zeros((34, cols * 34), np.uint8)
    for i, tile in enumerate(tiles):
        sheet[1:33, i * 34 + 1:i * 34 + 33] = np.rint(tile[:, :, 0] * 255.0).astype(np.uint8)
    Image.fromarray(sheet, mode="L").save(os.path.join(args.out_dir, "sheet.png"))
    print(f"wrote {args.count} variants and sheet.png to {args.out_dir}")


def _output_shapes(g):
    """Static shape walk for one input image, layer by layer."""
    side, ch = 32, 3
    flat = None
    for name, p in g.layers:
        if p.kind == "conv2d":
            ch = p.weights.shape[3]
            yield name, [side, side, ch]
        elif p.kind == "maxpool2d":
            side //= 2
            yield name, [side, side, ch]
        elif p.kind == "flatten":
            flat = side * side * ch
            yield name, [flat]
        elif p.kind == "dense":
            flat = p.weights.shape[1]
            yield name, [flat]
        else:
            yield name, [flat] if flat is not None else [side, side, ch]


def _cmd_export_info(args):
    g = net.build_hcrnet(args.classes, seed=0)
    counts = dict(net.layer_param_table(g))
    width = max(len(name) for name, _ in g.layers)
    print(f"{'layer':<{width}}  {'output shape':<16} params")
    for name, shape in _output_shapes(g):
        n = counts.get(name, 0)
        print(f"{name:<{width}}  {str(shape):<16} {n if n else ''}")
    total, trainable, frozen = net.param_count(g)
    print(f"total parameters: {total}")
    print(f"phase1 trainable: {trainable} (non-trainable {frozen})")
    net.set_phase(g, "phase2")
    total, trainable, frozen = net.param_count(g)
    print(f"phase2 trainable: {trainable} (non-trainable {frozen})")


def _build_parser():
    parser = _Parser(prog="hcrnet", description="Handwritten character recognition trainer")
    parser.add_argument("--version", action="version", version=f"hcrnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_test=False):
        _add_source_args(p)
        p.add_argument("--no-auto-invert", action="store_true",
                       help="keep image polarity as stored instead of auto-detecting")
        if with_test:
            _add_source_args(p, "test-")
            p.add_argument("--split", type=float, default=0.8,
                           help="train fraction when no explicit test source is given")
            p.add_argument("--split-seed", type=int, default=0)

    def augment_args(p):
        p.add_argument("--rotation", type=float, default=10.0, help="max rotation, degrees")
        p.add_argument("--shift", type=float, default=0.05, help="max shift, fraction of the side")
        p.add_argument("--shear", type=float, default=0.05, help="max shear factor")
        p.add_argument("--zoom", type=float, default=0.05, help="max zoom deviation from 1")

    p = sub.add_parser("train", help="train a model and write its artifacts")
    common(p, with_test=True)
    p.add_argument("--classes", type=int, help="class count when above what the data shows")
    p.add_argument("--pretrained", metavar="FILE", help="conv-stack weight archive to start from")
    p.add_argument("--epochs1", type=int, help="frozen-stack epochs (default 30, or 10 augmented)")
    p.add_argument("--epochs2", type=int, help="fine-tune epochs (default 20, or 50 augmented)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true", help="randomize training batches")
    augment_args(p)
    p.add_argument("--runs", type=int, default=1, help="independent repetitions to aggregate")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1, help="BLAS thread cap")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", help="also write metrics.csv and confusion.csv here")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze", help="export confusion matrix and misclassified images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("preview-augment", help="render augmentation variants of one sample")
    common(p)
    p.add_argument("--index", type=int, default=0, help="sample to preview")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    augment_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_preview_augment)

    p = sub.add_parser("export-info", help="print the layer table and parameter counts")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_export_info)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        with threadpool_limits(limits=args.workers):
            args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FormatError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
