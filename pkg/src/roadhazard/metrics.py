"""Point-level and obstacle-level evaluation.

Percentages and ratios are kept as exact fractions so that complementary
quantities (``rp + nr``, ``rr + np_``) sum to exactly 100. A ratio whose
denominator is zero is ``None`` and its name is listed in ``undefined``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


@dataclass(frozen=True)
class EvalReport:
    rp: Fraction | None
    rr: Fraction | None
    np_: Fraction | None
    nr: Fraction | None
    precision: Fraction | None
    recall: Fraction | None
    accuracy: Fraction | None
    f_score: Fraction | None
    undefined: frozenset[str] = field(default_factory=frozenset)

    def as_floats(self) -> dict[str, float | None]:
        names = ("rp", "rr", "np_", "nr", "precision", "recall", "accuracy", "f_score")
        return {n: (None if getattr(self, n) is None else float(getattr(self, n))) for n in names}


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr.astype(bool)


def confusion(predicted, truth) -> ConfusionMatrix:
    p = _binary(predicted, "predicted")
    t = _binary(truth, "truth")
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions, {len(t)} labels")
    return ConfusionMatrix(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def report(cm: ConfusionMatrix) -> EvalReport:
    undefined = set()

    def ratio(name, num, den):
        r = _ratio(num, den)
        if r is None:
            undefined.add(name)
        return r

    recall = ratio("recall", cm.tp, cm.positives)
    specificity = ratio("rr", cm.tn, cm.negatives)
    precision = ratio("precision", cm.tp, cm.tp + cm.fp)
    accuracy = ratio("accuracy", cm.tp + cm.tn, cm.positives + cm.negatives)
    f = ratio("f_score", 2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)
    rp = None if recall is None else 100 * recall
    rr = None if specificity is None else 100 * specificity
    if rp is None:
        undefined.update({"rp", "nr"})
    if rr is None:
        undefined.add("np_")
    return EvalReport(
        rp=rp,
        rr=rr,
        np_=None if rr is None else 100 - rr,
        nr=None if rp is None else 100 - rp,
        precision=precision,
        recall=recall,
        accuracy=accuracy,
        f_score=f,
        undefined=frozenset(undefined),
    )


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean; symmetric in its arguments."""
    if precision + recall == 0:
        raise ValueError("F-score undefined when precision and recall are both zero")
    return 2.0 * precision * recall / (precision + recall)


def _members(obstacle) -> set[int]:
    idx = getattr(obstacle, "vertex_indices", obstacle)
    return set(int(i) for i in np.asarray(idx).ravel())


def detection_counts(predicted, truth, overlap_tau: float = 0.5) -> tuple[int, int, int]:
    """``(correct, incorrect, misdetection)`` under greedy one-to-one overlap matching.

    The overlap of a pair is ``|pred & truth| / |truth|``; pairs at or above
    ``overlap_tau`` are matched largest first.
    """
    if not 0 < overlap_tau <= 1:
        raise ValueError("overlap_tau must lie in (0, 1]")
    preds = [_members(p) for p in predicted]
    truths = [_members(t) for t in truth]
    pairs = []
    for ti, t in enumerate(truths):
        if not t:
            continue
        for pi, p in enumerate(preds):
            ov = Fraction(len(p & t), len(t))
            if ov >= overlap_tau:
                pairs.append((-ov, ti, pi))
    pairs.sort()
    used_t, used_p = set(), set()
    for _, ti, pi in pairs:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
    correct = len(used_t)
    return correct, len(preds) - len(used_p), len(truths) - correct


TABLE_METRICS = (("RP", "rp"), ("NR", "nr"), ("NP", "np_"), ("RR", "rr"))


def density_label(ratio: float) -> str:
    return "Original" if ratio == 1.0 else f"~{ratio:g}"


def _mean(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def table_rows(reports: Mapping[str, Mapping[float, EvalReport]], densities: Sequence[float]) -> list[list[str]]:
    if not reports or not densities:
        raise ValueError("need at least one model and one density")
    cols = sorted(densities, reverse=True)
    rows = [["model", "metric", *map(density_label, cols)]]

    def cell(v):
        return "n/a" if v is None else f"{float(v):.2f}"

    for model, by_density in reports.items():
        for label, attr in TABLE_METRICS:
            rows.append([model, label, *(cell(getattr(by_density[d], attr)) for d in cols)])
    for label, attr in TABLE_METRICS:
        avg = [_mean(getattr(r[d], attr) for r in reports.values()) for d in cols]
        rows.append(["Average", label, *map(cell, avg)])
    return rows


def table_report(
    reports: Mapping[str, Mapping[float, EvalReport]],
    densities: Sequence[float],
    fmt: str = "text",
) -> str:
    """RP/NR/NP/RR grid per model and density, densest column first, plus Average rows."""
    rows = table_rows(reports, densities)
    if fmt == "csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in rows]
    return "\n".join(lines) + "\n"
