"""Confusion matrices, per-class metrics and the classification report.

Scoring always happens at the first taxonomy level; callers roll deeper
labels up before counting. Rates are kept at full precision in memory and
rounded (half-up, two decimals) only when the report is rendered.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from .taxonomy import Taxonomy


class EvaluationError(Exception):
    pass


def split(
    events,
    test_fraction: float,
    seed: int,
    stratified: bool = True,
    label_fn=lambda e: e.label,
):
    """Deterministic train/test split; disjoint and exhaustive.

    The test set holds round(n * test_fraction) items. Stratified mode keeps
    each class within one item of its proportional share via largest-remainder
    allocation and requires at least two examples per class.
    """
    if not 0 < test_fraction < 1:
        raise EvaluationError("test_fraction must be in (0, 1)")
    events = list(events)
    n = len(events)
    total_test = round(n * test_fraction)
    rng = np.random.default_rng(seed)

    if not stratified:
        order = rng.permutation(n)
        test_idx = set(order[:total_test].tolist())
        train = [e for i, e in enumerate(events) if i not in test_idx]
        test = [e for i, e in enumerate(events) if i in test_idx]
        return train, test

    by_class: dict[int, list[int]] = {}
    for i, event in enumerate(events):
        label = label_fn(event)
        if label is None:
            raise EvaluationError("stratified split needs a label on every event")
        by_class.setdefault(label, []).append(i)
    for label, members in sorted(by_class.items()):
        if len(members) < 2:
            raise EvaluationError(f"class {label} has {len(members)} example(s), need >= 2")

    quotas = allocate_test_counts(
        {label: len(members) for label, members in by_class.items()}, test_fraction
    )
    test_idx: set[int] = set()
    for label in sorted(by_class):
        members = np.asarray(by_class[label])
        order = rng.permutation(len(members))
        test_idx.update(members[order[: quotas[label]]].tolist())
    train = [e for i, e in enumerate(events) if i not in test_idx]
    test = [e for i, e in enumerate(events) if i in test_idx]
    return train, test


def allocate_test_counts(class_sizes: dict[int, int], test_fraction: float) -> dict[int, int]:
    """Largest-remainder allocation of the global test quota across classes.

    Exact fractions avoid float ties; remainder seats go to the largest
    fractional parts, class id breaking ties.
    """
    fraction = Fraction(test_fraction).limit_denominator(10**9)
    total = sum(class_sizes.values())
    target = round(total * test_fraction)
    base: dict[int, int] = {}
    remainders: list[tuple[Fraction, int]] = []
    for label in sorted(class_sizes):
        quota = class_sizes[label] * fraction
        base[label] = int(quota)
        remainders.append((quota - int(quota), label))
    leftover = target - sum(base.values())
    remainders.sort(key=lambda item: (-item[0], item[1]))
    for _, label in remainders[:leftover]:
        base[label] += 1
    return base


@dataclass
class ConfusionMatrix:
    """Counts indexed [actual][predicted] over a fixed class order."""

    classes: tuple[int, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise EvaluationError("cannot merge matrices over different class lists")
        return ConfusionMatrix(self.classes, self.counts + other.counts)


def confusion(pairs, classes) -> ConfusionMatrix:
    """Tally (actual, predicted) pairs into a matrix.

    ``pairs`` may be (actual, predicted) tuples or objects with .actual/.predicted.
    """
    classes = tuple(int(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for pair in pairs:
        if isinstance(pair, tuple):
            actual, predicted = pair
        else:
            actual, predicted = pair.actual, pair.predicted
        if actual is None:
            raise EvaluationError("prediction without an actual label")
        if actual not in index or predicted not in index:
            raise EvaluationError(f"label outside class list: actual={actual} pred={predicted}")
        counts[index[actual], index[predicted]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)


def normalize_rows(matrix: ConfusionMatrix) -> np.ndarray:
    """Each row divided by its sum; all-zero rows stay all-zero."""
    counts = matrix.counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    out = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return out


@dataclass
class ClassMetrics:
    category: int
    precision: float
    recall: float
    f1: float
    support: int
    flags: tuple[str, ...] = ()


def per_class_metrics(matrix: ConfusionMatrix) -> list[ClassMetrics]:
    """precision = TP/(TP+FP), recall = TP/(TP+FN), f1 = harmonic mean.

    Zero denominators yield 0.0 with a flag naming the undefined metric.
    """
    counts = matrix.counts
    out = []
    for i, category in enumerate(matrix.classes):
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum() - tp)
        fn = int(counts[i, :].sum() - tp)
        flags = []
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            flags.append("precision_undefined")
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            flags.append("recall_undefined")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flags.append("f1_undefined")
        out.append(
            ClassMetrics(
                category=category,
                precision=precision,
                recall=recall,
                f1=f1,
                support=tp + fn,
                flags=tuple(flags),
            )
        )
    return out


@dataclass
class Averages:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    per_class: list[ClassMetrics]
    accuracy: float
    macro: Averages
    weighted: Averages
    total_support: int


def aggregate(per_class: list[ClassMetrics], matrix: ConfusionMatrix | None = None) -> EvalReport:
    """Accuracy plus macro (unweighted) and weighted (by support) averages.

    With a matrix, accuracy is trace/total; without one it equals the
    support-weighted recall (the same number when every event carries
    exactly one actual class).
    """
    if not per_class:
        raise EvaluationError("no per-class metrics to aggregate")
    total = sum(m.support for m in per_class)
    k = len(per_class)
    macro = Averages(
        precision=sum(m.precision for m in per_class) / k,
        recall=sum(m.recall for m in per_class) / k,
        f1=sum(m.f1 for m in per_class) / k,
    )
    if total > 0:
        weighted = Averages(
            precision=sum(m.precision * m.support for m in per_class) / total,
            recall=sum(m.recall * m.support for m in per_class) / total,
            f1=sum(m.f1 * m.support for m in per_class) / total,
        )
    else:
        weighted = Averages(0.0, 0.0, 0.0)
    if matrix is not None:
        accuracy = float(np.trace(matrix.counts)) / matrix.total if matrix.total else 0.0
    else:
        accuracy = weighted.recall
    return EvalReport(
        per_class=list(per_class),
        accuracy=accuracy,
        macro=macro,
        weighted=weighted,
        total_support=total,
    )


def build_report(matrix: ConfusionMatrix) -> EvalReport:
    return aggregate(per_class_metrics(matrix), matrix)


def _round2(value: float) -> str:
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def render_report(report: EvalReport, taxonomy: Taxonomy) -> str:
    """Fixed-width classification report; identical inputs give identical bytes."""
    if report.total_support == 0:
        return "no events evaluated\n"
    labels = [f"Category {m.category} ({taxonomy.node(m.category).name})" for m in report.per_class]
    label_width = max(len(s) for s in labels + ["weighted avg"]) + 2
    columns = ("Precision", "Recall", "F1-score", "Support")
    widths = [max(len(c), 9) + 2 for c in columns]

    def row(label: str, cells: list[str]) -> str:
        return label.ljust(label_width) + "".join(
            c.rjust(w) for c, w in zip(cells, widths)
        )

    lines = [row("", list(columns)), ""]
    for label, m in zip(labels, report.per_class):
        lines.append(
            row(label, [_round2(m.precision), _round2(m.recall), _round2(m.f1), str(m.support)])
        )
    lines.append("")
    lines.append(row("accuracy", ["", "", _round2(report.accuracy), str(report.total_support)]))
    for name, avg in (("macro avg", report.macro), ("weighted avg", report.weighted)):
        lines.append(
            row(name, [_round2(avg.precision), _round2(avg.recall), _round2(avg.f1),
                       str(report.total_support)])
        )
    return "\n".join(lines) + "\n"


def confusion_csv(matrix: ConfusionMatrix, taxonomy: Taxonomy, normalized: bool = False) -> str:
    """Header of class names, one row per actual class; 6-decimal cells when normalized."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([taxonomy.node(c).name for c in matrix.classes])
    if normalized:
        for row in normalize_rows(matrix):
            writer.writerow([f"{v:.6f}" for v in row])
    else:
        for row in matrix.counts:
            writer.writerow([int(v) for v in row])
    return buf.getvalue()


def rolled_up_pairs(predictions, taxonomy: Taxonomy) -> list[tuple[int, int]]:
    """(actual, predicted) pairs mapped to their first-level categories."""
    pairs = []
    for pred in predictions:
        actual = pred.actual if not isinstance(pred, tuple) else pred[0]
        predicted = pred.predicted if not isinstance(pred, tuple) else pred[1]
        if actual is None:
            continue
        pairs.append((taxonomy.first_level_of(actual), taxonomy.first_level_of(predicted)))
    return pairs
