"""Confusion-matrix accumulation, the seven evaluation metrics, and report
emission.

Class index 1 is the positive class (malignant / first-named category).
Predicted class is the argmax over the two output nodes with ties broken
toward class 0.  Metrics whose denominator is zero are reported as
undefined (None), never NaN.
"""

import csv
import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .errors import EmptyMatrix, ShapeMismatch

METRIC_NAMES = ("accuracy", "precision", "npv", "recall", "specificity", "f1", "mcc")


@dataclass
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricReport:
    accuracy: float = None
    precision: float = None       # positive predictive value
    npv: float = None
    recall: float = None          # sensitivity
    specificity: float = None
    f1: float = None
    mcc: float = None
    cm: ConfusionMatrix = None

    def values(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def accumulate(predictions, labels, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add one batch of (b, 2) sigmoid outputs and one-hot labels to cm."""
    pd = predictions.data if hasattr(predictions, "data") else np.asarray(predictions)
    ld = labels.data if hasattr(labels, "data") else np.asarray(labels)
    if pd.shape != ld.shape or pd.ndim != 2 or pd.shape[1] != 2:
        raise ShapeMismatch(f"predictions {pd.shape} vs labels {ld.shape}, need (b, 2)")
    pred = np.argmax(pd, axis=1)  # first max wins, so ties go to class 0
    true = np.argmax(ld, axis=1)
    cm.tp += int(np.sum((pred == 1) & (true == 1)))
    cm.tn += int(np.sum((pred == 0) & (true == 0)))
    cm.fp += int(np.sum((pred == 1) & (true == 0)))
    cm.fn += int(np.sum((pred == 0) & (true == 1)))
    return cm


def _ratio(num: int, den: int):
    return None if den == 0 else num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricReport:
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    if tp + tn + fp + fn == 0:
        raise EmptyMatrix("confusion matrix has no samples")

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)

    den = (tp + fn) * (tp + fp) * (fp + tn) * (tn + fn)  # exact integer product
    mcc = None if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)

    return MetricReport(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        precision=precision,
        npv=_ratio(tn, tn + fn),
        recall=recall,
        specificity=_ratio(tn, tn + fp),
        f1=f1,
        mcc=mcc,
        cm=ConfusionMatrix(tp, tn, fp, fn),
    )


def format_percent(value) -> str:
    """Fraction -> percentage string, 2 decimals, round half to even."""
    if value is None:
        return ""
    return str(Decimal(repr(value * 100)).quantize(Decimal("0.01"), ROUND_HALF_EVEN))


def average_report(reports: dict) -> tuple:
    """Arithmetic mean per metric over the groups where it is defined.

    Returns (MetricReport with summed counts, {metric: n_defined}).
    """
    cm = ConfusionMatrix()
    for rep in reports.values():
        if rep.cm is not None:
            cm = cm.merge(rep.cm)
    avg = MetricReport(cm=cm)
    defined = {}
    for name in METRIC_NAMES:
        vals = [rep.values()[name] for rep in reports.values()
                if rep.values()[name] is not None]
        defined[name] = len(vals)
        if vals:
            setattr(avg, name, sum(vals) / len(vals))
    return avg, defined


def emit_report(reports: dict, fmt: str, path) -> None:
    """Write per-group rows plus an Average row as CSV or JSON.

    The Average of a metric covers only the groups where it is defined;
    partially defined metrics are flagged (a trailing ``#`` comment line in
    CSV, a ``partial_metrics`` list in JSON).
    """
    if not reports:
        raise EmptyMatrix("no reports to emit")
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    avg, defined = average_report(reports)
    partial = [n for n, k in defined.items() if 0 < k < len(reports)]
    rows = list(reports.items()) + [("Average", avg)]

    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "tp", "tn", "fp", "fn", *METRIC_NAMES])
            for group, rep in rows:
                c = rep.cm or ConfusionMatrix()
                w.writerow([group, c.tp, c.tn, c.fp, c.fn,
                            *(format_percent(rep.values()[n]) for n in METRIC_NAMES)])
            if partial:
                fh.write(f"# average over defined entries only: {','.join(partial)}\n")
        return

    payload = []
    for group, rep in rows:
        c = rep.cm or ConfusionMatrix()
        entry = {"group": group, "tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn}
        for name in METRIC_NAMES:
            v = rep.values()[name]
            entry[name] = None if v is None else float(format_percent(v))
        payload.append(entry)
    doc = {"rows": payload}
    if partial:
        doc["partial_metrics"] = partial
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
