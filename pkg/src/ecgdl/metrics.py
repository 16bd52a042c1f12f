"""Confusion matrices, F1 arithmetic, fold aggregation, and the paired t-test.

Confusion matrices are oriented rows = prediction, columns = ground truth.
Class F1 is 2*TP / (P + p) with P the ground-truth count and p the predicted
count; the overall score averages AF, N, and O while Noisy is reported but
excluded.  Summing fold matrices before computing F1 equals computing from
pooled predictions by construction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, NumericalError
from .heads import CLASS_NAMES

__all__ = ["ConfusionMatrix", "F1Report", "f1_per_class", "overall_f1",
           "paired_t_test", "cross_validate"]

EXCLUDED_FROM_OVERALL = ("Noisy",)


class ConfusionMatrix:
    """C x C integer counts; addable across folds."""

    def __init__(self, counts=None, classes=CLASS_NAMES):
        self.classes = tuple(classes)
        c = len(self.classes)
        self.counts = np.zeros((c, c), dtype=np.int64) if counts is None else \
            np.array(counts, dtype=np.int64)
        if self.counts.shape != (c, c):
            raise ConfigError(f"confusion matrix must be {c}x{c}, got {self.counts.shape}")
        if self.counts.min() < 0:
            raise ConfigError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, classes=CLASS_NAMES):
        cm = cls(classes=classes)
        for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
            cm.counts[int(p), int(t)] += 1
        return cm

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ConfigError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, classes=self.classes)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def f1_scores(self) -> np.ndarray:
        return np.array([f1_per_class(self, c) for c in range(len(self.classes))])

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def f1_per_class(cm: ConfusionMatrix, c: int) -> float:
    """2*TP / (P + p); the degenerate empty class scores 0 with a warning."""
    tp = cm.counts[c, c]
    p_true = cm.counts[:, c].sum()
    p_pred = cm.counts[c, :].sum()
    if p_true + p_pred == 0:
        warnings.warn(f"class {cm.classes[c]} absent from truth and predictions; F1 set to 0")
        return 0.0
    return float(2.0 * tp / (p_true + p_pred))


def overall_f1(per_class, classes=CLASS_NAMES) -> float:
    """Mean class F1 excluding Noisy."""
    kept = [f for f, name in zip(per_class, classes) if name not in EXCLUDED_FROM_OVERALL]
    return float(np.mean(kept))


@dataclass
class F1Report:
    """Per-fold class F1s, their aggregate, and the summed confusion matrix."""

    fold_f1: list                 # [k] arrays of per-class F1
    confusion: ConfusionMatrix
    classes: tuple = CLASS_NAMES
    aborted: dict = field(default_factory=dict)   # fold -> diagnostic

    @property
    def fold_overall(self) -> np.ndarray:
        return np.array([overall_f1(f, self.classes) for f in self.fold_f1])

    @property
    def mean_overall(self) -> float:
        return float(np.mean(self.fold_overall))

    @property
    def std_overall(self) -> float:
        return float(np.std(self.fold_overall))

    def mean_per_class(self) -> np.ndarray:
        return np.mean(np.stack(self.fold_f1), axis=0)

    def std_per_class(self) -> np.ndarray:
        return np.std(np.stack(self.fold_f1), axis=0)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_fold": {
                "per_class_f1": [list(map(float, f)) for f in self.fold_f1],
                "overall_f1": [float(v) for v in self.fold_overall],
            },
            "mean_per_class_f1": [float(v) for v in self.mean_per_class()],
            "std_per_class_f1": [float(v) for v in self.std_per_class()],
            "mean_overall_f1": self.mean_overall,
            "std_overall_f1": self.std_overall,
            "summed_confusion": self.confusion.counts.tolist(),
            "aborted_folds": {str(k): v for k, v in self.aborted.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, **kwargs)

    def format_table(self, architecture: str = "model") -> str:
        """Human-readable row in the published table layout."""
        mean = self.mean_per_class()
        std = self.std_per_class()
        cells = [f"{m:.2f} (+/- {s:.2f})" for m, s in zip(mean, std)]
        cells.append(f"{self.mean_overall:.2f} (+/- {self.std_overall:.2f})")
        header = ["Architecture"] + [f"F1_{c}" for c in self.classes] + ["F1_total"]
        widths = [max(len(h), 18) for h in header]
        line1 = "  ".join(h.rjust(w) for h, w in zip(header, widths))
        line2 = "  ".join(v.rjust(w) for v, w in zip([architecture] + cells, widths))
        return line1 + "\n" + line2


def paired_t_test(scores_a, scores_b):
    """Two-sided paired t-test; returns (t, p).

    Zero-variance differences use the degenerate convention p = 1 when the
    means agree and p = 0 otherwise.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ConfigError("paired t-test needs two equal-length score vectors (k >= 2)")
    d = a - b
    sd = d.std(ddof=1)
    n = len(d)
    if sd == 0.0:
        return (0.0, 1.0) if abs(d.mean()) == 0.0 else (float("inf"), 0.0)
    t = d.mean() / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return float(t), float(p)


def cross_validate(model_factory, records, k: int, train_config, seed: int = 0,
                   workers: int = 1):
    """Train/evaluate over stratified folds; returns (F1Report, fold matrices).

    ``model_factory(fold_index)`` must build a fresh model.  A fold whose
    training diverges is recorded with its diagnostic and excluded from the
    aggregate instead of failing the whole run.
    """
    from .data import stratified_fold_indices
    from .training import evaluate_confusion, train_model

    records = list(records)
    labels = [r.label for r in records]
    if any(l is None for l in labels):
        raise ConfigError("cross-validation needs labeled records")
    folds = stratified_fold_indices(labels, k, seed)

    def run_fold(fold: int):
        train_recs = [r for r, f in zip(records, folds) if f != fold]
        val_recs = [r for r, f in zip(records, folds) if f == fold]
        model = model_factory(fold)
        train_model(model, train_recs, train_config)
        return evaluate_confusion(model, val_recs, train_config)

    results: dict = {}
    aborted: dict = {}
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_fold, f): f for f in range(k)}
            for fut, fold in futures.items():
                try:
                    results[fold] = fut.result()
                except NumericalError as exc:
                    aborted[fold] = str(exc)
    else:
        for fold in range(k):
            try:
                results[fold] = run_fold(fold)
            except NumericalError as exc:
                aborted[fold] = str(exc)

    fold_cms = [results[f] for f in sorted(results)]
    if not fold_cms:
        raise NumericalError(f"all {k} folds diverged: {aborted}")
    summed = fold_cms[0]
    for cm in fold_cms[1:]:
        summed = summed + cm
    report = F1Report(fold_f1=[cm.f1_scores() for cm in fold_cms], confusion=summed,
                      aborted=aborted)
    return report, fold_cms
