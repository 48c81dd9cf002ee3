"""Evaluation: pooled (micro-averaged) precision-recall curve, violation audit, run summaries."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, EmptyBatch, EmptyList, ShapeMismatch
from .hierarchy import Hierarchy


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray  # first entry is the +inf sentinel anchoring recall 0
    area: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "recall", "precision"])
            for t, r, p in zip(self.thresholds, self.recall, self.precision):
                w.writerow([repr(float(t)), repr(float(r)), repr(float(p))])

    def summary_json(self) -> str:
        return json.dumps({"area": self.area, "n_points": len(self.recall)})


def trapezoid_area(recall, precision) -> float:
    r = np.asarray(recall, dtype=np.float64)
    p = np.asarray(precision, dtype=np.float64)
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def au_prc(scores, labels) -> PRCurve:
    """Area under the pooled precision-recall curve.

    Every distinct score is a threshold (positive iff score >= t).  TP, FP and
    FN are pooled over all classes and datapoints.  A sentinel above the
    largest score contributes the point (recall 0, precision of the first real
    threshold); the area is the trapezoid rule over recall.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ShapeMismatch(f"scores {s.shape} and labels {y.shape} differ")
    if s.size == 0:
        raise EmptyBatch("no scores to evaluate")
    s = s.ravel()
    y = (y.ravel() != 0)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("recall is undefined: labels contain no positives")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp, fp, thr = tp[last], fp[last], s_sorted[last]

    recall = tp / n_pos
    precision = tp / (tp + fp)
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    thresholds = np.r_[np.inf, thr]
    return PRCurve(recall, precision, thresholds, trapezoid_area(recall, precision))


def violation_audit(scores, hierarchy: Hierarchy, max_pairs: int | None = 1000):
    """Count (datapoint, A, B) with B a strict ancestor of A and score_A > score_B.

    Returns ``(count, pairs)``; ``pairs`` lists at most ``max_pairs`` offenders.
    """
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if S.shape[-1] != hierarchy.n:
        raise ShapeMismatch(f"scores have {S.shape[-1]} columns, hierarchy has {hierarchy.n}")
    anc, sub = np.nonzero(hierarchy.mask)  # sub is a subclass of anc
    strict = anc != sub
    anc, sub = anc[strict], sub[strict]
    count = 0
    pairs: list[tuple[int, int, int]] = []
    step = max(1, (1 << 22) // max(S.shape[0], 1))
    for k in range(0, len(anc), step):
        a, b = anc[k:k + step], sub[k:k + step]
        bad = S[:, b] > S[:, a]
        count += int(bad.sum())
        if max_pairs is None or len(pairs) < max_pairs:
            for d, e in zip(*np.nonzero(bad)):
                pairs.append((int(d), int(b[e]), int(a[e])))
                if max_pairs is not None and len(pairs) >= max_pairs:
                    break
    return count, pairs


@dataclass(frozen=True)
class RunStats:
    mean: float
    std: float
    min: float
    median: float
    max: float


def run_statistics(values: Sequence[float]) -> RunStats:
    """Mean, sample standard deviation (n - 1), min, median and max."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise EmptyList("no values to summarise")
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return RunStats(float(v.mean()), std, float(v.min()), float(np.median(v)), float(v.max()))


def average_ranks(table: dict[str, dict[str, float]]) -> dict[str, float]:
    """Average rank of each model across datasets (rank 1 = highest score, ties share)."""
    models = sorted({m for row in table.values() for m in row})
    ranks = {m: [] for m in models}
    for row in table.values():
        present = [m for m in models if m in row]
        r = rankdata([-row[m] for m in present], method="average")
        for m, rk in zip(present, r):
            ranks[m].append(float(rk))
    return {m: float(np.mean(v)) for m, v in ranks.items() if v}
