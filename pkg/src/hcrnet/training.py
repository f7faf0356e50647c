"""Two-phase training orchestration, evaluation metrics, experiment runs.

Phase1 trains the head on top of the frozen conv prefix; phase2
fine-tunes everything at tiny learning rates. The reported headline
accuracy is always the last-epoch value; the best epoch is tracked
separately and never changes which weights come back.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import network as net
from .augment import AugmentConfig, augment_batch
from .errors import DataError
from .optim import RmspropState, cross_entropy, default_schedules, lr_at, rmsprop_step
from .tensor import derive_rng, derive_seed
from .weights import init_from_pretrained

# Batch sizes for bulk inference. Anything running the conv stack stays
# small to bound im2col scratch memory; head-only activations are tiny.
CONV_EVAL_BATCH = 32
HEAD_EVAL_BATCH = 1024


@dataclass
class PhasePlan:
    """Epoch counts, batch size, augmentation, and the master seed.

    Leaving an epoch count at None picks the stock protocol: 30/20
    without augmentation, 10/50 with it.
    """

    epochs_phase1: Optional[int] = None
    epochs_phase2: Optional[int] = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs_phase1 is None:
            self.epochs_phase1 = 10 if self.augment.enabled else 30
        if self.epochs_phase2 is None:
            self.epochs_phase2 = 50 if self.augment.enabled else 20
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class MetricsReport:
    accuracy_last_epoch: float
    accuracy_best: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list
    confusion: np.ndarray
    history: list = field(default_factory=list)

    @property
    def accuracy(self):
        return self.accuracy_last_epoch


def confusion_matrix(true_labels, pred_labels, k) -> np.ndarray:
    """K x K count matrix, rows = true class, columns = predicted class."""
    cm = np.zeros((k, k), np.int64)
    np.add.at(cm, (np.asarray(true_labels, np.int64), np.asarray(pred_labels, np.int64)), 1)
    return cm


def report_from_confusion(cm) -> MetricsReport:
    """Accuracy plus macro-averaged per-class precision/recall/F1.

    Classes that are never predicted get precision 0 by convention, and
    classes absent from the test set get recall 0.
    """
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total == 0:
        raise DataError("empty confusion matrix")
    accuracy = float(np.trace(cm)) / total
    per_class = []
    for c in range(cm.shape[0]):
        tp = float(cm[c, c])
        col = float(cm[:, c].sum())
        row = float(cm[c].sum())
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append({
            "class": c, "precision": precision, "recall": recall, "f1": f1, "support": int(row),
        })
    return MetricsReport(
        accuracy_last_epoch=accuracy,
        accuracy_best=accuracy,
        macro_precision=float(np.mean([r["precision"] for r in per_class])),
        macro_recall=float(np.mean([r["recall"] for r in per_class])),
        macro_f1=float(np.mean([r["f1"] for r in per_class])),
        per_class=per_class,
        confusion=cm,
    )


def _batched_probs(g, arrays, start=0, batch=CONV_EVAL_BATCH):
    out = []
    for i in range(0, len(arrays), batch):
        p, _ = net.run_segment(g, arrays[i:i + batch], start, len(g.layers), mode="infer")
        out.append(p.data)
    return np.concatenate(out)


def _prefix_features(g, images, boundary, batch=CONV_EVAL_BATCH):
    out = []
    for i in range(0, len(images), batch):
        a, _ = net.run_segment(g, images[i:i + batch], 0, boundary, mode="infer")
        out.append(a.data)
    return np.concatenate(out)


def evaluate(g, test_set, batch_size=CONV_EVAL_BATCH) -> MetricsReport:
    """Infer-mode metrics on a dataset."""
    if len(test_set) == 0:
        raise DataError("cannot evaluate an empty dataset")
    probs = _batched_probs(g, test_set.images, 0, batch_size)
    preds = probs.argmax(axis=1)
    return report_from_confusion(confusion_matrix(test_set.labels, preds, g.num_classes))


def train(g, train_set, test_set, plan: PhasePlan):
    """Run phase1 then phase2 per the plan; returns (graph, MetricsReport).

    Training data is reshuffled every epoch (seeded); augmentation, when
    enabled, applies to training batches only. The test set is scored
    after every epoch with inference-mode batchnorm. The returned graph
    is always the final-epoch model.
    """
    for ds, tag in ((train_set, "training"), (test_set, "test")):
        if len(ds) == 0:
            raise DataError(f"the {tag} set is empty")
        if int(ds.labels.max()) >= g.num_classes:
            raise DataError(
                f"the {tag} set has label {int(ds.labels.max())} but the graph has {g.num_classes} classes"
            )
    history = []
    boundary = net.frozen_boundary(g)
    n = len(train_set)
    epoch_global = 0
    for phase_idx, (phase, epochs) in enumerate((("phase1", plan.epochs_phase1), ("phase2", plan.epochs_phase2))):
        if epochs == 0:
            continue
        net.set_phase(g, phase)
        schedule = default_schedules(phase, epochs)
        state = RmspropState()  # accumulators restart at each phase
        params = {name: (t, upd) for name, t, upd in g.named_parameters()}
        # With the prefix frozen and no augmentation, its output per image
        # is a fixed pure function, so it is computed once per dataset.
        cached = phase == "phase1" and not plan.augment.enabled
        if cached:
            feat_train = _prefix_features(g, train_set.images, boundary)
            feat_test = _prefix_features(g, test_set.images, boundary)
        for epoch in range(epochs):
            lr = lr_at(schedule, epoch)
            order = derive_rng(plan.seed, "shuffle", phase_idx, epoch).permutation(n)
            loss_sum = 0.0
            correct = 0
            for step, lo in enumerate(range(0, n, plan.batch_size)):
                idx = order[lo:lo + plan.batch_size]
                labels = train_set.labels[idx]
                step_seed = derive_seed(plan.seed, "step", phase_idx, epoch, step)
                if cached:
                    probs, caches = net.run_segment(
                        g, feat_train[idx], boundary, len(g.layers), "train", step_seed, collect=True
                    )
                    stop = 0
                else:
                    x = train_set.images[idx]
                    if plan.augment.enabled:
                        aug_seed = derive_seed(plan.seed, "augment", phase_idx, epoch, step)
                        x = augment_batch(x, plan.augment, aug_seed).data
                    probs, caches = net.run_segment(
                        g, x, 0, len(g.layers), "train", step_seed, collect=True
                    )
                    stop = boundary if phase == "phase1" else 0
                loss, grad = cross_entropy(probs, labels)
                grads = net.backward(g, caches, grad, stop=stop)
                rmsprop_step(params, grads, state, lr)
                loss_sum += loss * len(idx)
                correct += int((probs.data.argmax(axis=1) == labels).sum())
            if cached:
                test_probs = _batched_probs(g, feat_test, boundary, HEAD_EVAL_BATCH)
            else:
                test_probs = _batched_probs(g, test_set.images)
            test_acc = float((test_probs.argmax(axis=1) == test_set.labels).mean())
            history.append(EpochRecord(epoch_global, phase, lr, loss_sum / n, correct / n, test_acc))
            epoch_global += 1
    report = evaluate(g, test_set)
    report.history = history
    if history:
        report.accuracy_last_epoch = history[-1].test_acc
        report.accuracy_best = max(r.test_acc for r in history)
    return g, report


def run_experiment(train_set, test_set, plan: PhasePlan, runs=5, run_seeds=None,
                   pretrained=None, on_run=None):
    """Repeat the protocol with per-run seeds; mean and std per metric.

    Per-run seeds derive from the plan seed unless run_seeds is given
    (handing in identical seeds reproduces identical runs, std 0). Each
    run builds a fresh graph, optionally initialized from a pretrained
    archive. on_run(index, graph, report), when set, is called after
    each run so callers can persist artifacts.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if run_seeds is None:
        run_seeds = [derive_seed(plan.seed, "run", r) for r in range(runs)]
    elif len(run_seeds) != runs:
        raise ValueError(f"need {runs} run seeds, got {len(run_seeds)}")
    reports = []
    for r, seed in enumerate(run_seeds):
        g = net.build_hcrnet(train_set.num_classes, seed=seed)
        if pretrained is not None:
            init_from_pretrained(g, pretrained)
        _, report = train(g, train_set, test_set, replace(plan, seed=seed))
        reports.append(report)
        if on_run is not None:
            on_run(r, g, report)
    scalars = {
        "accuracy_last_epoch": [r.accuracy_last_epoch for r in reports],
        "accuracy_best": [r.accuracy_best for r in reports],
        "macro_precision": [r.macro_precision for r in reports],
        "macro_recall": [r.macro_recall for r in reports],
        "macro_f1": [r.macro_f1 for r in reports],
    }
    summary = {
        "runs": runs,
        "seeds": [int(s) for s in run_seeds],
        "mean": {k: float(np.mean(v)) for k, v in scalars.items()},
        "std": {k: float(np.std(v)) for k, v in scalars.items()},
    }
    return summary, reports


def misclassification_report(g, test_set, out_dir):
    """Write confusion.csv plus one PNG and an index row per error.

    Error images are named <true>_as_<predicted>_<index>.png and listed
    in misclassified.csv with the probability the model gave its wrong
    prediction.
    """
    from PIL import Image

    if len(test_set) == 0:
        raise DataError("cannot analyze an empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    probs = _batched_probs(g, test_set.images)
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(test_set.labels, preds, g.num_classes)
    write_confusion_csv(cm, test_set.class_names, os.path.join(out_dir, "confusion.csv"))
    names = test_set.class_names
    files, rows = [], []
    for i in np.flatnonzero(preds != test_set.labels):
        t, p = int(test_set.labels[i]), int(preds[i])
        fname = f"{names.get(t, t)}_as_{names.get(p, p)}_{i}.png"
        pixels = np.rint(test_set.images[i, :, :, 0] * 255.0).astype(np.uint8)
        Image.fromarray(pixels, mode="L").save(os.path.join(out_dir, fname))
        rows.append([int(i), str(names.get(t, t)), str(names.get(p, p)), repr(float(probs[i, p]))])
        files.append(fname)
    with open(os.path.join(out_dir, "misclassified.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "true", "predicted", "p_predicted"])
        w.writerows(rows)
    return {
        "total": len(test_set),
        "misclassified": len(files),
        "out_dir": out_dir,
        "images": files,
    }


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "phase", "lr", "train_loss", "train_acc", "test_acc"])
        for r in history:
            w.writerow([r.epoch, r.phase, repr(r.lr), repr(r.train_loss), repr(r.train_acc), repr(r.test_acc)])


def write_metrics_csv(report: MetricsReport, class_names, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for row in report.per_class:
            w.writerow([
                class_names.get(row["class"], str(row["class"])),
                repr(row["precision"]), repr(row["recall"]), repr(row["f1"]), row["support"],
            ])
        w.writerow(["macro", repr(report.macro_precision), repr(report.macro_recall), repr(report.macro_f1), ""])
        w.writerow(["accuracy_last_epoch", repr(report.accuracy_last_epoch), "", "", ""])
        w.writerow(["accuracy_best", repr(report.accuracy_best), "", "", ""])


def write_confusion_csv(cm, class_names, path):
    cm = np.asarray(cm)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + [class_names.get(i, str(i)) for i in range(cm.shape[1])])
        for i, row in enumerate(cm):
            w.writerow([class_names.get(i, str(i))] + [int(v) for v in row])
