"""Binary classification metrics with macro averaging over the two classes.

The 0/0 convention: a class with an empty denominator (never predicted, or
never present) gets precision/recall/F1 of 0. This only affects degenerate
classifiers and is deliberate so constant predictors score poorly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[int, ClassStats]
    n: int

    def to_dict(self) -> dict:
        return {
            "avg_p": self.macro_precision,
            "avg_r": self.macro_recall,
            "avg_f1": self.macro_f1,
            "acc": self.accuracy,
            "per_class": {
                str(c): {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for c, s in self.per_class.items()
            },
            "n": self.n,
        }


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Accuracy plus per-class and macro precision/recall/F1 for labels {0, 1}."""
    preds = np.asarray(list(predictions), dtype=np.int64)
    labs = np.asarray(list(labels), dtype=np.int64)
    if preds.shape != labs.shape:
        raise ValueError(
            f"length mismatch: {preds.shape[0]} predictions, {labs.shape[0]} labels"
        )
    if preds.size == 0:
        raise ValueError("cannot compute metrics on empty input")
    if labs.min() < 0 or labs.max() > 1:
        raise ValueError("labels must be 0 or 1")

    per_class: dict[int, ClassStats] = {}
    for c in (0, 1):
        tp = int(np.sum((preds == c) & (labs == c)))
        pred_c = int(np.sum(preds == c))
        true_c = int(np.sum(labs == c))
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / true_c if true_c else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_class[c] = ClassStats(precision, recall, f1, true_c)

    return Metrics(
        accuracy=float(np.mean(preds == labs)),
        macro_precision=(per_class[0].precision + per_class[1].precision) / 2.0,
        macro_recall=(per_class[0].recall + per_class[1].recall) / 2.0,
        macro_f1=(per_class[0].f1 + per_class[1].f1) / 2.0,
        per_class=per_class,
        n=int(preds.size),
    )


def render_metrics_table(rows: Sequence[tuple[str, Metrics]]) -> str:
    """Aligned plain-text table of macro metrics, reported as percentages."""
    header = ("Method", "Avg. P", "Avg. R", "Avg. F1", "Acc.")
    name_width = max(len(header[0]), *(len(name) for name, _ in rows)) if rows else len(header[0])
    lines = [
        f"{header[0]:<{name_width}}  "
        + "  ".join(f"{h:>7}" for h in header[1:])
    ]
    lines.append("-" * len(lines[0]))
    for name, m in rows:
        cells = (
            m.macro_precision * 100,
            m.macro_recall * 100,
            m.macro_f1 * 100,
            m.accuracy * 100,
        )
        lines.append(
            f"{name:<{name_width}}  " + "  ".join(f"{c:>7.2f}" for c in cells)
        )
    return "\n".join(lines) + "\n"
