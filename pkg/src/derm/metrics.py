"""Multi-class evaluation metrics: confusion matrix, one-vs-rest
precision/recall/F1, micro and weighted aggregation, top-k accuracy,
and fixed-width report rendering.

Per-class and aggregate values are computed with exact integer/rational
arithmetic and rounded to float only at the boundary, so the algebraic
identities (micro precision == micro recall == micro F1 == accuracy;
weighted recall == accuracy) hold exactly, not just approximately.
0/0 cases (a class never predicted, or absent from the truth) are
defined as 0 and flagged on the report.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; entry (i, j) = samples of true class i predicted as j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValidationError("confusion matrix counts must be non-negative")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) for class c."""
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


def confusion_matrix(true_labels: Sequence[int], predicted_labels: Sequence[int],
                     num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValidationError("label lists must be equal-length 1-D sequences")
    if t.size and (t.min() < 0 or t.max() >= num_classes or p.min() < 0 or p.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return ConfusionMatrix(m)


@dataclass(frozen=True)
class PerClassPRF:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    zero_division: bool  # True when any 0/0 was coerced to 0


def _prf_fractions(m: ConfusionMatrix) -> tuple[list[Fraction], list[Fraction], list[Fraction], list[int], bool]:
    prec, rec, f1s, supports = [], [], [], []
    hit_zero = False
    for c in range(m.num_classes):
        tp, fp, fn, _ = m.one_vs_rest(c)
        if tp + fp > 0:
            p = Fraction(tp, tp + fp)
        else:
            p, hit_zero = Fraction(0), True
        if tp + fn > 0:
            r = Fraction(tp, tp + fn)
        else:
            r, hit_zero = Fraction(0), True
        if p + r > 0:
            f = 2 * p * r / (p + r)
        else:
            f, hit_zero = Fraction(0), True
        prec.append(p)
        rec.append(r)
        f1s.append(f)
        supports.append(tp + fn)
    return prec, rec, f1s, supports, hit_zero


def per_class_prf(m: ConfusionMatrix) -> PerClassPRF:
    """One-vs-rest precision, recall, F1 and support per class; 0/0 -> 0."""
    prec, rec, f1s, supports, hit_zero = _prf_fractions(m)
    return PerClassPRF(
        precision=tuple(float(p) for p in prec),
        recall=tuple(float(r) for r in rec),
        f1=tuple(float(f) for f in f1s),
        support=tuple(supports),
        zero_division=hit_zero,
    )


def categorical_accuracy(m: ConfusionMatrix) -> float:
    """trace / total."""
    total = m.total
    if total == 0:
        raise ValidationError("accuracy of an empty confusion matrix is undefined")
    return int(np.trace(m.counts)) / total


def per_class_binary_accuracy(m: ConfusionMatrix, c: int) -> float:
    """(TP + TN) / total for the one-vs-rest reduction of class c."""
    total = m.total
    if total == 0:
        raise ValidationError("accuracy of an empty confusion matrix is undefined")
    tp, _, _, tn = m.one_vs_rest(c)
    return (tp + tn) / total


def micro_average(m: ConfusionMatrix) -> tuple[float, float, float]:
    """Pool TP/FP/FN over all classes, then apply the P/R/F1 formulas once."""
    if m.total == 0:
        raise ValidationError("micro average of an empty confusion matrix is undefined")
    tp = fp = fn = 0
    for c in range(m.num_classes):
        ctp, cfp, cfn, _ = m.one_vs_rest(c)
        tp, fp, fn = tp + ctp, fp + cfp, fn + cfn
    p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return float(p), float(r), float(f)


def weighted_average(values: Sequence, supports: Sequence[int]):
    """Support-weighted mean. Exact when given exact types (int/Fraction)."""
    if len(values) != len(supports):
        raise ValidationError("values and supports must have equal length")
    if any(s < 0 for s in supports):
        raise ValidationError("supports must be non-negative")
    total = sum(supports)
    if total == 0:
        raise ValidationError("weighted average needs a nonzero total support")
    return sum(s * v for s, v in zip(supports, values)) / total


def top_k_accuracy(probabilities, true_labels: Sequence[int], k: int) -> float:
    """Fraction of samples whose true class is among the k highest probabilities.

    Ties are broken in favor of the lower class index.
    """
    p = probabilities.array if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    if p.ndim != 2:
        raise ValidationError(f"probabilities must be (N, K), got shape {p.shape}")
    n, num_classes = p.shape
    if not 1 <= k <= num_classes:
        raise ValidationError(f"k must be in [1, {num_classes}], got {k}")
    t = np.asarray(true_labels, dtype=np.int64)
    if t.shape != (n,):
        raise ValidationError("true_labels length must match the probability rows")
    if n == 0:
        raise ValidationError("top-k accuracy of an empty set is undefined")
    order = np.argsort(-p, axis=1, kind="stable")
    hits = (order[:, :k] == t[:, None]).any(axis=1)
    return int(hits.sum()) / n


@dataclass(frozen=True)
class ClassReport:
    """Per-class and aggregate metrics in the canonical class order."""

    class_names: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    micro: tuple[float, float, float]
    weighted: tuple[float, float, float]
    accuracy: float
    zero_division: bool


def class_report(m: ConfusionMatrix, class_names: Sequence[str] | None = None) -> ClassReport:
    if class_names is None:
        class_names = tuple(f"class {i}" for i in range(m.num_classes))
    class_names = tuple(class_names)
    if len(class_names) != m.num_classes:
        raise ValidationError("one name per class required")
    prec, rec, f1s, supports, hit_zero = _prf_fractions(m)
    weighted = tuple(
        float(weighted_average(vals, supports)) for vals in (prec, rec, f1s)
    )
    return ClassReport(
        class_names=class_names,
        precision=tuple(float(p) for p in prec),
        recall=tuple(float(r) for r in rec),
        f1=tuple(float(f) for f in f1s),
        support=tuple(supports),
        micro=micro_average(m),
        weighted=weighted,
        accuracy=categorical_accuracy(m),
        zero_division=hit_zero,
    )


def round2(x: float) -> str:
    """Two-decimal half-up rounding of the shortest decimal form of x."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_report(report: ClassReport) -> str:
    """Fixed-width table: one row per class, then micro and weighted rows."""
    rows = [
        (name, report.precision[i], report.recall[i], report.f1[i], report.support[i])
        for i, name in enumerate(report.class_names)
    ]
    total = sum(report.support)
    rows.append(("Micro Average", *report.micro, total))
    rows.append(("Weighted Average", *report.weighted, total))
    name_w = max(len(r[0]) for r in rows) + 2
    lines = [f"{'':<{name_w}}{'precision':>10}{'recall':>8}{'f1-score':>10}{'support':>9}", ""]
    for name, p, r, f, s in rows:
        lines.append(f"{name:<{name_w}}{round2(p):>10}{round2(r):>8}{round2(f):>10}{s:>9}")
    lines.append("")
    lines.append(f"accuracy {round2(report.accuracy)} (n={total})")
    if report.zero_division:
        lines.append("warning: some classes had no predictions or no support; 0/0 reported as 0")
    return "\n".join(lines)


def report_to_json(report: ClassReport) -> dict:
    """Full-precision JSON document for the report."""
    return {
        "classes": [
            {
                "name": report.class_names[i],
                "precision": report.precision[i],
                "recall": report.recall[i],
                "f1": report.f1[i],
                "support": report.support[i],
            }
            for i in range(len(report.class_names))
        ],
        "micro_average": dict(zip(("precision", "recall", "f1"), report.micro)),
        "weighted_average": dict(zip(("precision", "recall", "f1"), report.weighted)),
        "accuracy": report.accuracy,
        "zero_division": report.zero_division,
    }


def confusion_to_csv(m: ConfusionMatrix, class_codes: Sequence[str]) -> str:
    """CSV with a header row and a leading column of class codes."""
    if len(class_codes) != m.num_classes:
        raise ValidationError("one code per class required")
    lines = ["," + ",".join(class_codes)]
    for i, code in enumerate(class_codes):
        lines.append(code + "," + ",".join(str(int(v)) for v in m.counts[i]))
    return "\n".join(lines) + "\n"
