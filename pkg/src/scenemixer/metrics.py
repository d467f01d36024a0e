"""Confusion matrix and the three evaluation statistics: overall accuracy,
average accuracy, and Cohen's kappa.

Average accuracy ships in two variants that genuinely diverge on
imbalanced errors: `macro_recall` (mean per-class recall, the remote
sensing convention) and `eq2` (mean one-vs-rest binary accuracy,
(TP_i + TN_i) / total averaged over classes). Reports label the former
"AA" and the latter "AA_eq2".
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = true class, cols = predicted
    class_names: list | None = None

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def names(self) -> list:
        if self.class_names is not None:
            return list(self.class_names)
        return [f"class_{i}" for i in range(self.num_classes)]


def confusion(y_true, y_pred, num_classes: int, class_names=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} true vs {y_pred.shape} predicted")
    if num_classes < 2:
        raise ValueError(f"need >= 2 classes, got {num_classes}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels outside [0,{num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    if class_names is not None and len(class_names) != num_classes:
        raise ValueError(f"{len(class_names)} class names for {num_classes} classes")
    return ConfusionMatrix(counts, list(class_names) if class_names is not None else None)


def _require_nonempty(cm: ConfusionMatrix):
    if cm.total == 0:
        raise ValueError("empty confusion matrix")


def overall_accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.trace(cm.counts)) / cm.total


def average_accuracy(cm: ConfusionMatrix, variant: str = "macro_recall") -> float:
    _require_nonempty(cm)
    c = cm.counts.astype(np.float64)
    total = cm.total
    tp = np.diag(c)
    if variant == "macro_recall":
        rows = c.sum(axis=1)
        if np.any(rows == 0):
            empty = int(np.argmax(rows == 0))
            raise ValueError(f"macro_recall undefined: class {empty} has no true samples")
        return float(np.mean(tp / rows))
    if variant == "eq2":
        rows = c.sum(axis=1)
        cols = c.sum(axis=0)
        tn = total - rows - cols + tp
        return float(np.mean((tp + tn) / total))
    raise ValueError(f"unknown average_accuracy variant {variant!r}")


def kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement (P_o - P_e) / (1 - P_e)."""
    _require_nonempty(cm)
    c = cm.counts.astype(np.float64)
    total = cm.total
    p_o = float(np.trace(c)) / total
    p_e = float(np.sum(c.sum(axis=1) * c.sum(axis=0))) / (total * total)
    if p_e == 1.0:
        raise ValueError("kappa undefined: expected chance agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def metrics_summary(cm: ConfusionMatrix) -> dict:
    """OA, both AA variants, and kappa x 100, as presented by reports."""
    return {
        "OA": overall_accuracy(cm),
        "AA": average_accuracy(cm, "macro_recall"),
        "AA_eq2": average_accuracy(cm, "eq2"),
        "kappa_x100": kappa(cm) * 100.0,
    }


def confusion_to_csv(cm: ConfusionMatrix) -> str:
    names = cm.names()
    lines = ["true," + ",".join(names)]
    for name, row in zip(names, cm.counts):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def metrics_to_csv(cm: ConfusionMatrix) -> str:
    summary = metrics_summary(cm)
    lines = ["metric,value"]
    for key in ("OA", "AA", "AA_eq2"):
        lines.append(f"{key},{summary[key] * 100.0!r}")
    lines.append(f"kappa_x100,{summary['kappa_x100']!r}")
    return "\n".join(lines) + "\n"
