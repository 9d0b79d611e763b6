"""Stratified cross-validation and its reports.

Folds are stratified per class so every fold sees the same class
balance (sizes within a class differ by at most one). The headline
number, mean_accuracy, is computed from the pooled confusion matrix,
trace over total, so every row counts once regardless of fold size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .forest import (
    ForestParams,
    TooFewSamples,
    feature_importance,
    fit_forest,
    predict_forest,
)
from .randomness import DOMAIN_FOLDS, DOMAIN_SPLIT, substream
from .telemetry import CLASS_COUNT, CLASS_NAMES, FEATURE_NAMES, WorkloadClass


def stratified_folds(
    labels: np.ndarray, k: int, rng_seed: int = 0
) -> list[np.ndarray]:
    """Partition row indices into k folds with per-class balance.

    Every class present in `labels` is shuffled and dealt across the
    folds so per-class fold sizes differ by at most one. Classes with
    fewer than k rows raise TooFewSamples. Returns k sorted index
    arrays that partition range(len(labels)).
    """
    y = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = substream(rng_seed, DOMAIN_FOLDS)
    parts: list[list[np.ndarray]] = [[] for _ in range(k)]
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if idx.size < k:
            name = WorkloadClass(int(cls)).name
            raise TooFewSamples(
                f"class {name} has {idx.size} rows, needs at least {k}"
            )
        idx = idx[rng.permutation(idx.size)]
        base, extra = divmod(idx.size, k)
        at = 0
        for f in range(k):
            take = base + (1 if f < extra else 0)
            parts[f].append(idx[at : at + take])
            at += take
    return [np.sort(np.concatenate(p)) for p in parts]


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    fold_accuracies: tuple[float, ...]
    confusion: np.ndarray  # (classes, classes), rows = truth
    importances: np.ndarray  # (features,)

    @property
    def mean_accuracy(self) -> float:
        """Pooled accuracy: trace of the confusion matrix over its total."""
        return float(np.trace(self.confusion) / self.confusion.sum())


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    params: ForestParams = ForestParams(),
    k: int = 10,
    rng_seed: int = 0,
) -> EvaluationReport:
    """k-fold stratified cross-validation of a forest configuration.

    Each fold trains on the other k-1 folds with its own derived seed
    and is scored on the held-out fold. The confusion matrix pools all
    folds; importances are the mean of the per-fold forests'.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    folds = stratified_folds(y, k, rng_seed)
    confusion = np.zeros((CLASS_COUNT, CLASS_COUNT), dtype=np.int64)
    importances = np.zeros(len(FEATURE_NAMES), dtype=np.float64)
    accuracies = []
    for f, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
        fold_seed = int(substream(rng_seed, DOMAIN_SPLIT, f).integers(2**62))
        forest = fit_forest(X[train_idx], y[train_idx], params, fold_seed)
        pred = predict_forest(forest, X[test_idx])
        truth = y[test_idx]
        np.add.at(confusion, (truth, pred), 1)
        accuracies.append(float((pred == truth).mean()))
        importances += feature_importance(forest)
    importances /= k
    return EvaluationReport(tuple(accuracies), confusion, importances)


def majority_accuracy(labels: Sequence[int] | np.ndarray) -> float:
    """Accuracy of always answering the most common class."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise TooFewSamples("no labels")
    return float(np.bincount(y).max() / y.size)


# ---------------------------------------------------------------------------
# Report files


def write_confusion(confusion: np.ndarray, stream: TextIO) -> None:
    stream.write("truth," + ",".join(CLASS_NAMES) + "\n")
    for c, name in enumerate(CLASS_NAMES):
        stream.write(name + "," + ",".join(str(int(v)) for v in confusion[c]) + "\n")


def write_fold_accuracies(accuracies: Sequence[float], stream: TextIO) -> None:
    stream.write("fold,accuracy\n")
    for f, acc in enumerate(accuracies):
        stream.write(f"{f},{acc!r}\n")


def write_importances(importances: np.ndarray, stream: TextIO) -> None:
    stream.write("feature,importance\n")
    for name, value in zip(FEATURE_NAMES, importances):
        stream.write(f"{name},{float(value)!r}\n")


def render_summary(report: EvaluationReport, baseline: float | None = None) -> str:
    lines = [
        f"fold {f:2d}  accuracy {acc:.6f}"
        for f, acc in enumerate(report.fold_accuracies)
    ]
    lines.append(f"mean accuracy {report.mean_accuracy:.6f}")
    if baseline is not None:
        lines.append(f"majority baseline {baseline:.6f}")
    top = np.argsort(report.importances)[::-1][:3]
    lines.append(
        "top features: "
        + ", ".join(f"{FEATURE_NAMES[i]} ({report.importances[i]:.3f})" for i in top)
    )
    return "\n".join(lines) + "\n"
