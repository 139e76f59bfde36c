from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class MetricTables:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    n: int
    per_snr: dict = field(default_factory=dict)
    per_noise: dict = field(default_factory=dict)
    per_snr_f1: dict = field(default_factory=dict)
    per_snr_n: dict = field(default_factory=dict)


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def macro_f1(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Unweighted mean F1 over the classes that occur in labels or predictions."""
    if labels.size == 0:
        return 0.0
    cm = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = (support + predicted) > 0
    denom = support + predicted
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1[present].mean())


def compute_metrics(predictions, labels, conditions=None, n_classes: int | None = None) -> MetricTables:
    """Overall, per-SNR and per-noise accuracy, macro-F1 and the confusion matrix.

    ``conditions`` holds one (snr_label, noise_name) pair per sample.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ArgumentError(f"{predictions.size} predictions for {labels.size} labels")
    if conditions is not None and len(conditions) != labels.size:
        raise ArgumentError(f"{len(conditions)} conditions for {labels.size} labels")
    if n_classes is None:
        n_classes = int(max(predictions.max(initial=-1), labels.max(initial=-1)) + 1)
    correct = predictions == labels
    tables = MetricTables(
        accuracy=float(correct.mean()) if labels.size else 0.0,
        macro_f1=macro_f1(predictions, labels, n_classes),
        confusion=confusion_matrix(predictions, labels, n_classes),
        n=int(labels.size),
    )
    if conditions is not None:
        snrs = np.array([str(c[0]) for c in conditions], dtype=object)
        noises = np.array(["clean" if c[1] is None else str(c[1]) for c in conditions], dtype=object)
        for snr in sorted(set(snrs), key=condition_sort_key):
            m = snrs == snr
            tables.per_snr[snr] = float(correct[m].mean())
            tables.per_snr_f1[snr] = macro_f1(predictions[m], labels[m], n_classes)
            tables.per_snr_n[snr] = int(m.sum())
        for noise in sorted(set(noises)):
            tables.per_noise[noise] = float(correct[noises == noise].mean())
    return tables


def condition_sort_key(label: str):
    """'clean' first, then SNR levels from highest to lowest."""
    return (0, 0) if label == "clean" else (1, -int(label))
