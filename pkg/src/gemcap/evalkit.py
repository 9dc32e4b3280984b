"""Classification and captioning metrics, and the report tables."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataforge import CLASSES
from .error_handler import ClassError, EmptyEvaluation, InputMismatch, log
from .lexicon import Lexicon, detokenize, tokenize

TEXT, JSON = "text", "json"
FORMATS = (TEXT, JSON)


def _check_pair(predictions: Sequence, labels: Sequence) -> None:
    if len(predictions) != len(labels):
        raise InputMismatch(left=len(predictions), right=len(labels))
    if not labels:
        raise EmptyEvaluation()


def ccr(predictions: Sequence, labels: Sequence) -> float:
    """Correct classification rate."""
    _check_pair(predictions, labels)
    hits = sum(1 for p, y in zip(predictions, labels) if p == y)
    return hits / len(labels)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: Tuple[str, ...] = CLASSES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def index(self, jewelry_class: str) -> int:
        try:
            return self.classes.index(jewelry_class)
        except ValueError:
            raise ClassError(jewelry_class=jewelry_class)

    def to_list(self) -> List[List[int]]:
        return self.counts.astype(int).tolist()


def confusion(
    predictions: Sequence[str], labels: Sequence[str], classes=CLASSES
) -> ConfusionMatrix:
    """Rows are true classes, columns predictions."""
    _check_pair(predictions, labels)
    classes = tuple(classes)
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for pred, true in zip(predictions, labels):
        for name in (pred, true):
            if name not in classes:
                raise ClassError(jewelry_class=name)
        counts[classes.index(true), classes.index(pred)] += 1
    return ConfusionMatrix(counts, classes)


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def prf1(cm: ConfusionMatrix, jewelry_class: str) -> Tuple[float, float, float]:
    """Precision, recall and F1 for one class; zero denominators give 0."""
    k = cm.index(jewelry_class)
    tp = float(cm.counts[k, k])
    fp = float(cm.counts[:, k].sum()) - tp
    fn = float(cm.counts[k, :].sum()) - tp
    precision = _ratio(tp, tp + fp) or 0.0
    recall = _ratio(tp, tp + fn) or 0.0
    f1 = _ratio(2 * precision * recall, precision + recall) or 0.0
    return precision, recall, f1


def canonical_caption(caption: str, lexicon: Optional[Lexicon] = None) -> str:
    """Lowercase, tokenizer round-trip, exactly one terminal period."""
    text = detokenize(tokenize(caption, lexicon)).rstrip(". ")
    return text + "."


def exact_match(
    generated: Sequence[str], gold: Sequence[str], lexicon: Optional[Lexicon] = None
) -> float:
    _check_pair(generated, gold)
    hits = sum(
        1
        for g, y in zip(generated, gold)
        if canonical_caption(g, lexicon) == canonical_caption(y, lexicon)
    )
    return hits / len(gold)


@dataclass
class MetricsReport:
    ccr: float
    per_class: Dict[str, Tuple[float, float, float]]
    confusion: List[List[int]]
    caption_exact_match: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def macro(self) -> Tuple[float, float, float]:
        values = list(self.per_class.values())
        return tuple(sum(v[i] for v in values) / len(values) for i in range(3))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["per_class"] = {
            name: {"precision": p, "recall": r, "f1": f}
            for name, (p, r, f) in self.per_class.items()
        }
        data["macro"] = dict(zip(("precision", "recall", "f1"), self.macro))
        return data


def classification_report(
    predictions: Sequence[str],
    labels: Sequence[str],
    captions: Optional[Tuple[Sequence[str], Sequence[str]]] = None,
) -> MetricsReport:
    cm = confusion(predictions, labels)
    per_class = {}
    notes = []
    for name in cm.classes:
        k = cm.index(name)
        if not cm.counts[:, k].sum():
            notes.append(f"precision of '{name}' undefined (never predicted), reported as 0")
        if not cm.counts[k, :].sum():
            notes.append(f"recall of '{name}' undefined (no true samples), reported as 0")
        per_class[name] = prf1(cm, name)
    for note in notes:
        log(f"evalkit warning: {note}")
    match = exact_match(*captions) if captions else None
    return MetricsReport(
        ccr=cm.trace / cm.total,
        per_class=per_class,
        confusion=cm.to_list(),
        caption_exact_match=match,
        warnings=notes,
    )


def render_metrics(report: MetricsReport, fmt: str = TEXT) -> str:
    if fmt == JSON:
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    lines = [f"CCR: {report.ccr:.4f}"]
    if report.caption_exact_match is not None:
        lines.append(f"Caption exact match: {report.caption_exact_match:.4f}")
    lines += ["", "Confusion matrix (rows = true, columns = predicted)"]
    width = max(len(c) for c in CLASSES) + 2
    lines.append(" " * width + "".join(f"{c:>{width}}" for c in CLASSES))
    for name, row in zip(CLASSES, report.confusion):
        lines.append(f"{name:<{width}}" + "".join(f"{v:>{width}d}" for v in row))
    lines += ["", f"{'Class':<{width}}{'Precision':>11}{'Recall':>11}{'F1-Score':>11}"]
    for name, (p, r, f) in report.per_class.items():
        lines.append(f"{name:<{width}}{p:>11.4f}{r:>11.4f}{f:>11.4f}")
    mp, mr, mf = report.macro
    lines.append(f"{'macro avg':<{width}}{mp:>11.4f}{mr:>11.4f}{mf:>11.4f}")
    for note in report.warnings:
        lines.append(f"warning: {note}")
    return "\n".join(lines)


# -- grid results table ---------------------------------------------------------------


@dataclass
class ResultRow:
    cnn: str
    rnn: str
    neurons: int
    val_ccr: float
    val_loss: float
    test_ccr: float
    batch: Optional[int] = None
    lr: Optional[float] = None
    optimizer: Optional[str] = None
    diverged: bool = False


def _finite(row: ResultRow) -> bool:
    return not row.diverged and math.isfinite(row.test_ccr) and math.isfinite(row.val_loss)


def best_row(rows: Sequence[ResultRow]) -> int:
    """Index of the best row: highest Test CCR, ties to the lower Val. Loss."""
    if not rows:
        raise EmptyEvaluation()
    candidates = [i for i, row in enumerate(rows) if _finite(row)] or list(range(len(rows)))
    return min(candidates, key=lambda i: (-rows[i].test_ccr, rows[i].val_loss, i))


_HEADERS = ("CNN-scale", "RNN", "Neurons", "Val. CCR", "Val. Loss", "Test CCR")


def _cells(row: ResultRow) -> List[str]:
    def num(x):
        return "diverged" if row.diverged or not math.isfinite(x) else f"{x:.4f}"

    return [
        row.cnn,
        row.rnn.upper(),
        str(row.neurons),
        num(row.val_ccr),
        num(row.val_loss),
        num(row.test_ccr),
    ]


def render_report(rows: Sequence[ResultRow], fmt: str = TEXT) -> str:
    best = best_row(rows)
    if fmt == JSON:
        marked = [dict(asdict(r), best=(i == best)) for i, r in enumerate(rows)]
        payload = {"best": best, "rows": marked}
        return json.dumps(payload, indent=2, sort_keys=True)
    table = [list(_HEADERS)] + [_cells(r) for r in rows]
    widths = [max(len(line[c]) for line in table) for c in range(len(_HEADERS))]

    def fmt_line(cells, mark=" "):
        return mark + " | ".join(cell.ljust(w) for cell, w in zip(cells, widths))

    lines = [fmt_line(table[0]), " " + "-+-".join("-" * w for w in widths)]
    for i, cells in enumerate(table[1:]):
        lines.append(fmt_line(cells, "*" if i == best else " "))
    lines.append("")
    lines.append("* best row: highest Test CCR, ties broken by lower Val. Loss")
    return "\n".join(lines)
