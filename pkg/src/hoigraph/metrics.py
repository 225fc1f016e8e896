"""Confusion matrices and F1 scores for the subactivity and affordance heads."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import NUM_AFFORDANCES, NUM_SUBACTIVITIES


class MetricsError(ValueError):
    pass


def confusion(y_true: Sequence[int], y_pred: Sequence[int], k: int) -> np.ndarray:
    """K x K counts; rows are ground truth, columns predictions."""
    if len(y_true) != len(y_pred):
        raise MetricsError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if not (0 <= t < k and 0 <= p < k):
            raise MetricsError(f"label outside [0, {k}): true={t} pred={p}")
        cm[t, p] += 1
    return cm


def per_class_scores(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 per class; 0 wherever the ratio is undefined."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_f1(cm: np.ndarray, present_only: bool = False) -> float:
    """Unweighted mean of per-class F1.

    By default every one of the K classes counts, so a class with no support
    and no predictions contributes F1 = 0. ``present_only`` averages over the
    classes that occur in the ground truth or the predictions instead.
    """
    cm = np.asarray(cm)
    if cm.size == 0 or cm.sum() == 0:
        raise MetricsError("macro F1 of an empty confusion matrix")
    f1 = per_class_scores(cm)[2]
    if present_only:
        present = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
        return float(f1[present].mean())
    return float(f1.mean())


def micro_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise MetricsError("micro F1 of an empty confusion matrix")
    # single-label: micro P = micro R = accuracy
    return float(np.trace(cm) / cm.sum())


@dataclass
class HeadReport:
    name: str
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    macro_f1_present: float
    micro_f1: float

    @classmethod
    def build(cls, name: str, y_true: Sequence[int], y_pred: Sequence[int], k: int
              ) -> "HeadReport":
        cm = confusion(y_true, y_pred, k)
        p, r, f = per_class_scores(cm)
        if cm.sum() == 0:
            return cls(name, cm, p, r, f, float("nan"), float("nan"), float("nan"))
        return cls(name, cm, p, r, f, macro_f1(cm), macro_f1(cm, present_only=True), micro_f1(cm))

    def to_json(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_f1": self.macro_f1,
            "macro_f1_present": self.macro_f1_present,
            "micro_f1": self.micro_f1,
            "samples": int(self.confusion.sum()),
        }


@dataclass
class EvalReport:
    subactivity: HeadReport
    affordance: HeadReport

    @classmethod
    def build(cls, sub_true, sub_pred, aff_true, aff_pred) -> "EvalReport":
        return cls(HeadReport.build("subactivity", sub_true, sub_pred, NUM_SUBACTIVITIES),
                   HeadReport.build("affordance", aff_true, aff_pred, NUM_AFFORDANCES))

    def to_json(self) -> dict:
        return {"subactivity": self.subactivity.to_json(), "affordance": self.affordance.to_json()}

    def render(self) -> str:
        lines = [f"{'head':<12} {'macro_f1':>9} {'macro_present':>14} {'micro_f1':>9} {'n':>6}"]
        for h in (self.subactivity, self.affordance):
            lines.append(f"{h.name:<12} {h.macro_f1:>9.4f} {h.macro_f1_present:>14.4f} "
                         f"{h.micro_f1:>9.4f} {int(h.confusion.sum()):>6}")
        for h in (self.subactivity, self.affordance):
            lines.append("")
            lines.append(f"{h.name} per class (precision recall f1 support)")
            support = h.confusion.sum(axis=1)
            for c in range(len(h.f1)):
                lines.append(f"  {c:>2} {h.precision[c]:.3f} {h.recall[c]:.3f} {h.f1[c]:.3f} "
                             f"{int(support[c])}")
        return "\n".join(lines)

    def write(self, out_dir: str | Path, prefix: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}_report.json").write_text(
            json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (out / f"{prefix}_report.txt").write_text(self.render() + "\n", encoding="utf-8")
        for h in (self.subactivity, self.affordance):
            (out / f"{prefix}_confusion_{h.name}.csv").write_text(
                confusion_csv(h.confusion), encoding="utf-8")


def confusion_csv(cm: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + list(range(cm.shape[1])))
    for i, row in enumerate(cm):
        w.writerow([i] + [int(v) for v in row])
    return buf.getvalue()
