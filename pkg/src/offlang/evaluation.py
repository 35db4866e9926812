"""Confusion matrices, per-class precision/recall/F1, accuracy and macro-F1,
with report rendering that mirrors the per-class + ALL table layout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .corpus import CLASS_ORDER, TweetRecord, project
from .objectives import predict_labels

if TYPE_CHECKING:  # pragma: no cover
    from .training import Checkpoint


class EmptyProjectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[i, j] = examples with gold classes[i] predicted as classes[j]."""

    classes: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple[str, ...]
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    support: dict[str, int]
    accuracy: float
    macro_f1: float
    # The ALL row: micro-averaged one-vs-rest P/R/F1, which for single-label
    # multi-class data all equal accuracy.
    micro_precision: float
    micro_recall: float
    micro_f1: float


def confusion(preds: Sequence, golds: Sequence, classes: Sequence[str]) -> ConfusionMatrix:
    """Count gold/predicted label pairs over an ordered class list."""
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if len(preds) == 0:
        raise ValueError("cannot build a confusion matrix from zero examples")
    index = {str(getattr(c, "value", c)): i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, g in zip(preds, golds):
        p = str(getattr(p, "value", p))
        g = str(getattr(g, "value", g))
        if p not in index or g not in index:
            raise ValueError(f"label outside class list: pred={p!r} gold={g!r}")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(tuple(index), counts)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def class_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """One-vs-rest precision/recall/F1 per class (0/0 counts as 0), accuracy,
    macro-F1, and the micro aggregates used for the ALL row."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    precision, recall, f1, support = {}, {}, {}, {}
    tp_sum = fp_sum = fn_sum = 0
    for i, label in enumerate(cm.classes):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum() - tp)
        fn = int(cm.counts[i, :].sum() - tp)
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        precision[label] = p
        recall[label] = r
        f1[label] = _safe_div(2.0 * p * r, p + r)
        support[label] = tp + fn
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    accuracy = float(np.trace(cm.counts)) / cm.total
    micro_p = _safe_div(tp_sum, tp_sum + fp_sum)
    micro_r = _safe_div(tp_sum, tp_sum + fn_sum)
    micro_f = _safe_div(2.0 * micro_p * micro_r, micro_p + micro_r)
    return MetricsReport(
        classes=cm.classes,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=accuracy,
        macro_f1=macro_f1(f1.values()),
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=micro_f,
    )


def macro_f1(f1_scores: "MetricsReport | Iterable[float]") -> float:
    """Unweighted arithmetic mean of per-class F1, zero-F1 classes included."""
    if isinstance(f1_scores, MetricsReport):
        values = [f1_scores.f1[c] for c in f1_scores.classes]
    else:
        values = [float(v) for v in f1_scores]
    if not values:
        raise ValueError("macro-F1 needs at least one class")
    return float(sum(values) / len(values))


def evaluate(
    checkpoint: "Checkpoint", test_set: Sequence[TweetRecord], level: str
) -> tuple[MetricsReport, ConfusionMatrix]:
    """Predict the level's projection of the test set and score it."""
    rows = project(test_set, level)
    if not rows:
        raise EmptyProjectionError(f"no test records participate at level {level}")
    classes = CLASS_ORDER[level]
    golds = [r.label_at(level) for r in rows]
    idx, _ = predict_labels(checkpoint, [r.text for r in rows])
    preds = [classes[i] for i in idx]
    cm = confusion(preds, golds, classes)
    report = class_metrics(cm)
    return report, cm


def format_report(report: MetricsReport, title: str) -> str:
    """Two-decimal, paper-style table: one row per class plus the ALL row."""
    header = f"{title:<12}{'Precision':>10}{'Recall':>8}{'F1':>6}{'Accuracy':>10}{'MacroF':>8}"
    lines = [header]
    for label in report.classes:
        lines.append(
            f"{label:<12}{report.precision[label]:>10.2f}{report.recall[label]:>8.2f}"
            f"{report.f1[label]:>6.2f}{'--':>10}{'--':>8}"
        )
    lines.append(
        f"{'ALL':<12}{report.micro_precision:>10.2f}{report.micro_recall:>8.2f}"
        f"{report.micro_f1:>6.2f}{report.accuracy:>10.2f}{report.macro_f1:>8.2f}"
    )
    return "\n".join(lines)


def report_tsv(report: MetricsReport) -> str:
    """Full-precision machine-readable report."""
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for label in report.classes:
        lines.append(
            f"{label}\t{report.precision[label]:.12g}\t{report.recall[label]:.12g}"
            f"\t{report.f1[label]:.12g}\t{report.support[label]}"
        )
    lines.append(
        f"ALL\t{report.micro_precision:.12g}\t{report.micro_recall:.12g}\t{report.micro_f1:.12g}"
        f"\t{sum(report.support.values())}"
    )
    lines.append(f"accuracy\t{report.accuracy:.12g}")
    lines.append(f"macro_f1\t{report.macro_f1:.12g}")
    return "\n".join(lines) + "\n"
