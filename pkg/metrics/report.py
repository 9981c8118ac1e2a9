"""
Evaluation metrics: confusion counts and the accuracy / F1 / IoU / balanced
accuracy / likelihood-ratio report.

Zero denominators:
- TP+FN = 0: sensitivity = 1 if FP = 0 else 0
- TN+FP = 0: specificity = 1 if FN = 0 else 0
- 2TP+FP+FN = 0: f1 = iou = 1
- specificity = 1: plr = inf
- specificity = 0: nlr = inf
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from utils.error_manager import ContractError

CSV_COLUMNS = ("acc", "f1", "iou", "bacc", "plr", "nlr")
SEG_THRESHOLD = 0.5

@dataclass(frozen=True)
class Confusion:
    TP: int
    FP: int
    TN: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN

    def swapped(self) -> "Confusion":
        """The same predictions with positive and negative labels exchanged."""
        return Confusion(TP=self.TN, FP=self.FN, TN=self.TP, FN=self.FP)

@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    iou: float
    balanced_accuracy: float
    plr: float
    nlr: float
    sensitivity: float = float("nan")
    specificity: float = float("nan")

    @staticmethod
    def csv_header() -> str:
        return ",".join(CSV_COLUMNS)

    def to_csv_row(self) -> str:
        values = (self.accuracy, self.f1, self.iou, self.balanced_accuracy, self.plr, self.nlr)
        return ",".join(_format_value(v) for v in values)

def _format_value(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"

def confusion(preds: Sequence, targets: Sequence) -> Confusion:
    """
    Counts of a binary prediction against binary targets (any shape, flattened).

    Raises:
        ContractError: lengths differ or values are not 0/1
    """
    p = np.asarray(preds).reshape(-1)
    t = np.asarray(targets).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} targets")
    for name, values in (("predictions", p), ("targets", t)):
        if not np.all((values == 0) | (values == 1)):
            raise ContractError(f"{name} must be binary")
    p, t = p.astype(bool), t.astype(bool)
    return Confusion(TP=int(np.sum(p & t)), FP=int(np.sum(p & ~t)),
                     TN=int(np.sum(~p & ~t)), FN=int(np.sum(~p & t)))

def report(c: Confusion) -> MetricsReport:
    """
    Metrics of one confusion.

    Raises:
        ContractError: all counts are zero
    """
    if min(c.TP, c.FP, c.TN, c.FN) < 0:
        raise ContractError(f"negative confusion count: {c}")
    if c.total == 0:
        raise ContractError("cannot report metrics of an empty confusion")

    if c.TP + c.FN:
        sens = c.TP / (c.TP + c.FN)
    else:
        sens = 1.0 if c.FP == 0 else 0.0
    if c.TN + c.FP:
        spec = c.TN / (c.TN + c.FP)
    else:
        spec = 1.0 if c.FN == 0 else 0.0

    overlap = 2 * c.TP + c.FP + c.FN
    f1 = 2 * c.TP / overlap if overlap else 1.0
    union = c.TP + c.FP + c.FN
    iou = c.TP / union if union else 1.0

    plr = math.inf if spec == 1.0 else sens / (1.0 - spec)
    nlr = math.inf if spec == 0.0 else (1.0 - sens) / spec
    return MetricsReport(accuracy=(c.TP + c.TN) / c.total, f1=f1, iou=iou,
                         balanced_accuracy=(sens + spec) / 2.0, plr=plr, nlr=nlr,
                         sensitivity=sens, specificity=spec)

def segmentation_report(probs: np.ndarray, masks: np.ndarray, threshold: float = SEG_THRESHOLD) -> MetricsReport:
    """Pixelwise report of sigmoid probabilities binarized at `threshold`."""
    return report(confusion((np.asarray(probs) >= threshold).astype(np.int64), masks))

def classification_report(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> MetricsReport:
    """
    Multi-class accuracy; the other columns macro-averaged over one-vs-rest confusions.

    Raises:
        ContractError: empty input, length mismatch or ids outside [0, num_classes)
    """
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise ContractError("cannot report metrics of zero predictions")
    if min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_classes:
        raise ContractError(f"class ids must lie in [0, {num_classes})")
    if num_classes == 2:
        return report(confusion(p, t))

    per_class: List[MetricsReport] = [report(confusion(p == k, t == k)) for k in range(num_classes)]
    def macro(attr: str) -> float:
        values = [getattr(r, attr) for r in per_class]
        return math.inf if any(math.isinf(v) for v in values) else float(np.mean(values))
    return MetricsReport(accuracy=float(np.mean(p == t)), f1=macro("f1"), iou=macro("iou"),
                         balanced_accuracy=macro("balanced_accuracy"), plr=macro("plr"), nlr=macro("nlr"),
                         sensitivity=macro("sensitivity"), specificity=macro("specificity"))
