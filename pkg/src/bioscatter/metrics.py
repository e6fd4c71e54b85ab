"""Pixel confusion counts, precision / recall / dice, and report CSVs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluation, ShapeMismatch, ZeroBase

REPORT_COLUMNS = ("model", "precision_pct", "recall_pct", "dice_pct", "flags")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _bits(x):
    return np.asarray(getattr(x, "bits", x), dtype=bool)


def confusion(pred, truth, valid=None) -> ConfusionCounts:
    """Count TP/FP/FN/TN over valid pixels only."""
    p, t = _bits(pred), _bits(truth)
    v = np.ones(p.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not (p.shape == t.shape == v.shape):
        raise ShapeMismatch(f"pred {p.shape}, truth {t.shape}, valid {v.shape}")
    p, t = p[v], t[v]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    dice: float
    flags: tuple = ()


def metrics_from_counts(c: ConfusionCounts) -> Scores:
    """Precision TP/(TP+FP), recall TP/(TP+FN), dice 2TP/(2TP+FP+FN).

    Degenerate cases: nothing predicted and nothing true scores 1.0 across
    the board with flag ``empty``; nothing predicted while positives exist
    gives precision 0 with flag ``no-predictions``; no positives in truth
    while something was predicted gives recall 0 with flag ``no-positives``.
    """
    if c.tp + c.fp + c.fn == 0:
        return Scores(1.0, 1.0, 1.0, ("empty",))
    flags = []
    if c.tp + c.fp == 0:
        precision = 0.0
        flags.append("no-predictions")
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = 0.0
        flags.append("no-positives")
    else:
        recall = c.tp / (c.tp + c.fn)
    dice = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return Scores(precision, recall, dice, tuple(flags))


def harmonic_dice(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def relative_improvement(new: float, base: float) -> float:
    """Percent change from ``base`` to ``new``."""
    if base <= 0:
        raise ZeroBase(f"base must be > 0, got {base}")
    return 100.0 * (new - base) / base


@dataclass
class EvalReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    dice: float
    flags: tuple = ()
    model: str = ""
    rows: list = field(default_factory=list)

    def row(self, model: str | None = None):
        return (model or self.model, 100 * self.precision, 100 * self.recall, 100 * self.dice, self.flags)


def evaluate(masks, model: str = "") -> EvalReport:
    """Micro-aggregate: pool counts over every (pred, truth, valid) triple,
    then score once."""
    masks = list(masks)
    if not masks:
        raise EmptyEvaluation("nothing to evaluate")
    total = ConfusionCounts()
    for pred, truth, valid in masks:
        total = total + confusion(pred, truth, valid)
    s = metrics_from_counts(total)
    return EvalReport(total, s.precision, s.recall, s.dice, s.flags, model)


def format_report_csv(reports) -> str:
    """One row per model: ``model,precision_pct,recall_pct,dice_pct,flags``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        name, p, rc, d, flags = r.row()
        w.writerow([name, f"{p:.4f}", f"{rc:.4f}", f"{d:.4f}", ";".join(flags)])
    return buf.getvalue()


def read_table_csv(text: str):
    """Parse a table of ``model,precision_pct,recall_pct,dice_pct[,flags]`` rows."""
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:4]] != list(REPORT_COLUMNS[:4]):
        raise ValueError(f"expected header starting {','.join(REPORT_COLUMNS[:4])}")
    for rec in reader:
        if not rec or not "".join(rec).strip():
            continue
        rows.append((rec[0].strip(), float(rec[1]), float(rec[2]), float(rec[3])))
    return rows


def check_table(rows, tolerance_pp: float = 0.02):
    """Harmonic-identity check per row: |dice - 2PR/(P+R)| in percentage points."""
    out = []
    for name, p, r, d in rows:
        implied = harmonic_dice(p, r)
        gap = abs(d - implied)
        out.append((name, implied, gap, gap <= tolerance_pp))
    return out
