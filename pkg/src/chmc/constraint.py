"""Max constraint module, max constraint loss and the post-processing baselines.

For a class ``A`` with subclass set ``D_A`` (``A`` included):

    MCM_A    = max_{B in D_A} h_B
    MCLoss_A = -y_A ln(max_{B in D_A} y_B h_B) - (1 - y_A) ln(1 - MCM_A)

The functions here operate on a single score vector ``(n,)`` or a batch
``(rows, n)``.  ``mcloss`` is the closed-form numpy version returning the loss
and its gradient; ``mcloss_graph`` builds the same quantity on a tape from
the masked BCE formulation and is what the trainer differentiates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffgraph import EPS, Node, Tape, row_max
from .errors import ShapeMismatch
from .hierarchy import Hierarchy, check_consistent


def _scores(h, hierarchy: Hierarchy) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != hierarchy.n or h.ndim not in (1, 2):
        raise ShapeMismatch(f"scores of shape {h.shape} do not match {hierarchy.n} classes")
    return h


def mcm_forward(h, hierarchy: Hierarchy) -> np.ndarray:
    """Constrained scores: each class takes the max raw score over its subclasses."""
    h = _scores(h, hierarchy)
    return row_max(h, hierarchy.max_index)[0]


def post_process_min_ancestors(h, hierarchy: Hierarchy) -> np.ndarray:
    """Each class takes the min raw score over its ancestors (itself included)."""
    h = _scores(h, hierarchy)
    return -row_max(-h, hierarchy.min_index)[0]


def g_plus_combine(g_a, g_b_minus_a):
    """Scores for (A, B) from a network predicting A and B without A."""
    g_a = np.asarray(g_a, dtype=np.float64)
    return g_a, np.maximum(np.asarray(g_b_minus_a, dtype=np.float64), g_a)


def mcloss(h, y, hierarchy: Hierarchy, reduction: str = "sum", eps: float = EPS):
    """Max constraint loss and its gradient with respect to the raw scores ``h``.

    The gradient of each max term goes to a single argmax (smallest index on
    ties) and log arguments are clamped into [eps, 1 - eps].
    """
    h = _scores(h, hierarchy)
    y = np.asarray(y)
    if y.shape != h.shape:
        raise ShapeMismatch(f"labels {y.shape} and scores {h.shape} differ")
    check_consistent(y, hierarchy)
    single = h.ndim == 1
    H = np.atleast_2d(h)
    Y = np.atleast_2d(y).astype(bool)
    rows, n = H.shape

    mcm, mcm_arg = row_max(H, hierarchy.max_index)
    pos_val = np.empty_like(H)
    pos_arg = np.empty((rows, n), dtype=np.int64)
    for r in range(rows):
        # only positive subclasses compete in the positive term
        v, a = row_max(H[r], hierarchy.mask & Y[r][None, :])
        pos_val[r], pos_arg[r] = v, a

    p_pos = np.clip(pos_val, eps, 1 - eps)
    p_neg = np.clip(mcm, eps, 1 - eps)
    terms = np.where(Y, -np.log(p_pos), -np.log1p(-p_neg))
    d_term = np.where(Y, -1.0 / p_pos, 1.0 / (1.0 - p_neg))
    target = np.where(Y, pos_arg, mcm_arg)

    grad = np.zeros_like(H)
    rr = np.repeat(np.arange(rows), n)
    np.add.at(grad, (rr, target.ravel()), d_term.ravel())

    if reduction == "mean":
        scale = 1.0 / H.size
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    loss = float(terms.sum() * scale)
    grad *= scale
    return loss, (grad[0] if single else grad)


def bce_on_mcm(h, y, hierarchy: Hierarchy, eps: float = EPS):
    """Plain binary cross-entropy on the constrained scores, with gradient wrt ``h``."""
    tape = Tape()
    hn = tape.leaf(h)
    loss = tape.bce(tape.masked_row_max(hn, hierarchy.max_index), y, eps=eps)
    tape.backward(loss)
    return float(loss.value), hn.grad


def mcloss_graph(tape: Tape, h: Node, y: np.ndarray, hierarchy: Hierarchy, reduction: str = "mean") -> Node:
    """MCLoss on a tape: BCE((1 - y) * MCM + y * max(M * (y * h)), y)."""
    y = np.asarray(y, dtype=np.float64)
    mcm = tape.masked_row_max(h, hierarchy.max_index)
    pos = tape.masked_row_max(tape.mul(h, y), hierarchy.max_index)
    pred = tape.add(tape.mul(mcm, 1.0 - y), tape.mul(pos, y))
    return tape.bce(pred, y, reduction=reduction)


def bce_on_mcm_graph(tape: Tape, h: Node, y: np.ndarray, hierarchy: Hierarchy, reduction: str = "mean") -> Node:
    return tape.bce(tape.masked_row_max(h, hierarchy.max_index), y, reduction=reduction)


@dataclass
class DelegationReport:
    # (datapoint, class, delegate, h_class, h_delegate)
    records: list[tuple[int, int, int, float, float]] = field(default_factory=list)
    rates: dict[int, float] = field(default_factory=dict)
    names: tuple[str, ...] = ()

    def rate(self, cls) -> float:
        if isinstance(cls, str):
            cls = self.names.index(cls)
        return self.rates[cls]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["datapoint", "class", "delegate", "h_class", "h_delegate"])
            for d, i, j, hi, hj in self.records:
                ci = self.names[i] if self.names else i
                cj = self.names[j] if self.names else j
                w.writerow([d, ci, cj, repr(hi), repr(hj)])


def delegation_report(h, hierarchy: Hierarchy, region=None) -> DelegationReport:
    """Find where a class's constrained score comes from a strictly larger subclass score.

    ``region`` optionally restricts the per-class rate to a boolean subset of
    datapoints; records always cover the whole batch.
    """
    H = np.atleast_2d(_scores(h, hierarchy))
    mcm, arg = row_max(H, hierarchy.max_index)
    delegating = mcm > H
    report = DelegationReport(names=hierarchy.names)
    for d, i in zip(*np.nonzero(delegating)):
        j = int(arg[d, i])
        report.records.append((int(d), int(i), j, float(H[d, i]), float(H[d, j])))

    sel = np.ones(H.shape[0], dtype=bool) if region is None else np.asarray(region, dtype=bool)
    for i in range(hierarchy.n):
        if len(hierarchy.descendants[i]) > 1 and sel.any():
            report.rates[i] = float(delegating[sel, i].mean())
    return report
