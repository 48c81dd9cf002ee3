import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from chmc.constraint import (
    bce_on_mcm,
    delegation_report,
    g_plus_combine,
    mcloss,
    mcloss_graph,
    mcm_forward,
    post_process_min_ancestors,
)
from chmc.diffgraph import Tape
from chmc.errors import InconsistentLabels, ShapeMismatch
from chmc.hierarchy import build_hierarchy, close_labels, flat_hierarchy
from chmc.metrics import violation_audit

import oracles
from strategies import consistent_labels, dags, seeds

TWO = build_hierarchy(["A", "B"], [("B", "A")])


def star(n):
    """A below each of A_1..A_n."""
    names = ["A"] + [f"A{i}" for i in range(1, n + 1)]
    return build_hierarchy(names, [(f"A{i}", "A") for i in range(1, n + 1)])


# ---- worked examples -----------------------------------------------------------

def test_mcm_examples():
    h = np.array([0.2, 0.9, 0.4])
    assert np.array_equal(mcm_forward(h, flat_hierarchy(["a", "b", "c"])), h)
    assert mcm_forward([0.3, 0.1], TWO).tolist() == [0.3, 0.3]
    with pytest.raises(ShapeMismatch):
        mcm_forward([0.1, 0.2, 0.3], TWO)


def test_two_class_gradients():
    h, y = np.array([0.3, 0.1]), np.array([0, 1])
    _, g_plain = bce_on_mcm(h, y, TWO)
    assert abs(g_plain[0] - (-1 / (h[0] - 1) - 1 / h[0])) <= 1e-9
    assert g_plain[0] == pytest.approx(-1.9048, abs=1e-4)
    assert g_plain[1] == 0.0

    _, g = mcloss(h, y, TWO)
    assert abs(g[0] - 1 / (1 - h[0])) <= 1e-9
    assert abs(g[1] - (-1 / h[1])) <= 1e-9
    assert g[0] == pytest.approx(1.4286, abs=1e-4) and g[1] == pytest.approx(-10.0)


@pytest.mark.parametrize("n", [1, 10, 50])
def test_star_gradient_independent_of_fan_in(n):
    hier = star(n)
    rng = np.random.default_rng(n)
    h = np.r_[0.9, rng.uniform(0.1, 0.8, size=n)]
    y = np.r_[0, np.ones(n, dtype=int)]
    _, g = mcloss(h, y, hier)
    assert abs(g[0] - 1 / (1 - h[0])) <= 1e-12
    _, g_plain = bce_on_mcm(h, y, hier)
    assert g_plain[0] == pytest.approx(1 / (1 - h[0]) - n / h[0], rel=1e-9)


def test_all_negative_labels():
    rng = np.random.default_rng(0)
    h = rng.uniform(size=3)
    hier = build_hierarchy(["a", "b", "c"], [("c", "a"), ("c", "b")])
    loss, _ = mcloss(h, np.zeros(3, dtype=int), hier)
    assert loss == pytest.approx(-np.log1p(-mcm_forward(h, hier)).sum(), rel=1e-12)


def test_mcloss_rejects_inconsistent_labels():
    with pytest.raises(InconsistentLabels):
        mcloss([0.3, 0.1], [1, 0], TWO)
    with pytest.raises(ShapeMismatch):
        mcloss([0.3, 0.1], [1, 1, 0], TWO)
    with pytest.raises(ValueError):
        mcloss([0.3, 0.1], [0, 1], TWO, reduction="median")


def test_min_ancestor_examples():
    h = np.array([0.2, 0.9, 0.4])
    assert np.array_equal(post_process_min_ancestors(h, flat_hierarchy(["a", "b", "c"])), h)
    assert post_process_min_ancestors([0.7, 0.4], TWO).tolist() == [0.4, 0.4]
    chain = build_hierarchy(["A", "B", "C"], [("B", "A"), ("C", "B")])
    assert post_process_min_ancestors([0.9, 0.2, 0.5], chain).tolist() == [0.2, 0.2, 0.5]


@pytest.mark.parametrize("ga,gb,expected", [
    (0.9, 0.1, (0.9, 0.9)),
    (0.2, 0.8, (0.2, 0.8)),
    (0.5, 0.5, (0.5, 0.5)),
])
def test_g_plus(ga, gb, expected):
    a, b = g_plus_combine(ga, gb)
    assert (float(a), float(b)) == expected


def test_delegation_examples(tmp_path):
    flat = flat_hierarchy(["a", "b"])
    rep = delegation_report(np.array([[0.9, 0.2]]), flat)
    assert rep.records == [] and rep.rates == {}

    rep = delegation_report(np.array([0.9, 0.2]), TWO)
    assert rep.records == [(0, 1, 0, 0.2, 0.9)]
    assert rep.rate("B") == 1.0

    rep = delegation_report(np.array([[0.9, 0.2], [0.1, 0.5]]), TWO, region=[False, True])
    assert len(rep.records) == 1 and rep.rate("B") == 0.0

    rep.to_csv(tmp_path / "d.csv")
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[0] == ["datapoint", "class", "delegate", "h_class", "h_delegate"]
    assert rows[1][:3] == ["0", "B", "A"]


# ---- oracle comparisons and properties -----------------------------------------

@given(dags(max_n=16, min_n=16), seeds)
def test_mcm_matches_loops_n16(dag, seed):
    h, edges = dag
    hv = np.random.default_rng(seed).uniform(size=16)
    desc = oracles.descendant_lists(16, edges)
    out = mcm_forward(hv, h)
    assert np.array_equal(out, oracles.mcm(hv, desc))
    assert violation_audit(out, h)[0] == 0


@given(dags(max_n=64), seeds)
def test_theorem1_no_violations(dag, seed):
    h, edges = dag
    rng = np.random.default_rng(seed)
    H = rng.uniform(size=(4, h.n))
    anc = oracles.ancestor_lists(h.n, edges)
    assert oracles.violations(mcm_forward(H, h), anc) == 0
    assert oracles.violations(post_process_min_ancestors(H, h), anc) == 0
    assert violation_audit(mcm_forward(H, h), h)[0] == 0


@given(dags(max_n=12), seeds)
def test_min_ancestors_matches_loops(dag, seed):
    h, edges = dag
    hv = np.random.default_rng(seed).uniform(size=h.n)
    assert np.array_equal(post_process_min_ancestors(hv, h), oracles.min_ancestors(hv, oracles.ancestor_lists(h.n, edges)))


@given(dags(max_n=12), seeds, st.floats(0.0, 1.0))
def test_mcm_monotone(dag, seed, bump):
    h, _ = dag
    rng = np.random.default_rng(seed)
    hv = rng.uniform(size=h.n)
    k = int(rng.integers(h.n))
    raised = hv.copy()
    raised[k] = max(raised[k], bump)
    assert np.all(mcm_forward(raised, h) >= mcm_forward(hv, h))


@given(dags(max_n=12), seeds)
def test_mcm_idempotent(dag, seed):
    h, _ = dag
    hv = np.random.default_rng(seed).uniform(size=(3, h.n))
    once = mcm_forward(hv, h)
    assert np.array_equal(mcm_forward(once, h), once)


@given(dags(max_n=10), seeds)
def test_mcloss_matches_definition(dag, seed):
    h, edges = dag
    rng = np.random.default_rng(seed)
    hv = rng.uniform(0.01, 0.99, size=(3, h.n))
    Y = consistent_labels(rng, h, 3)
    desc = oracles.descendant_lists(h.n, edges)
    loss, _ = mcloss(hv, Y, h)
    expected = sum(oracles.mcloss(hv[r], Y[r], desc) for r in range(3))
    assert loss == pytest.approx(expected, rel=1e-12, abs=1e-12)


@given(dags(max_n=10), seeds)
def test_mcloss_graph_agrees_with_closed_form(dag, seed):
    h, _ = dag
    rng = np.random.default_rng(seed)
    hv = rng.uniform(0.01, 0.99, size=(4, h.n))
    Y = consistent_labels(rng, h, 4)
    loss, grad = mcloss(hv, Y, h, reduction="mean")
    tape = Tape()
    node = tape.leaf(hv)
    out = mcloss_graph(tape, node, Y, h, reduction="mean")
    tape.backward(out)
    assert float(out.value) == pytest.approx(loss, rel=1e-12)
    assert np.allclose(node.grad, grad, rtol=1e-12, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(dags(max_n=8), seeds)
def test_mcloss_gradient_finite_differences(dag, seed):
    h, edges = dag
    rng = np.random.default_rng(seed)
    hv = rng.uniform(0.05, 0.95, size=h.n)
    assume(np.all(np.diff(np.sort(hv)) > 1e-3))  # away from max ties
    y = consistent_labels(rng, h, 1)[0]
    desc = oracles.descendant_lists(h.n, edges)
    _, grad = mcloss(hv, y, h)
    numeric = oracles.central_diff(lambda v: oracles.mcloss(v, y, desc), hv)
    assert oracles.rel_close(grad, numeric, rtol=1e-4)


@given(dags(max_n=10), seeds)
def test_loss_agreement_when_no_delegation_is_needed(dag, seed):
    """With h already coherent and every positive class at its positive max, the two losses coincide."""
    h, _ = dag
    rng = np.random.default_rng(seed)
    Y = consistent_labels(rng, h, 1)[0]
    # negatives below every positive; an ancestor's score is the max over its subclasses
    raw = np.where(Y == 1, rng.uniform(0.5, 0.95, size=h.n), rng.uniform(0.05, 0.45, size=h.n))
    hv = mcm_forward(raw, h)
    pos = np.where(Y == 1, hv, 0.0)
    for a in range(h.n):
        if Y[a]:
            assume(hv[a] == max(pos[b] for b in h.descendants[a]))
        else:
            assume(all(hv[b] <= hv[a] for b in h.descendants[a]))
    l_mc, _ = mcloss(hv, Y, h)
    l_plain, _ = bce_on_mcm(hv, Y, h)
    assert abs(l_mc - l_plain) <= 1e-12


def test_mcloss_loss_values_for_two_class_example():
    h, y = np.array([0.3, 0.1]), np.array([0, 1])
    loss, _ = mcloss(h, y, TWO)
    assert loss == pytest.approx(-np.log(0.7) - np.log(0.1), rel=1e-12)
    plain, _ = bce_on_mcm(h, y, TWO)
    assert plain == pytest.approx(-np.log(0.7) - np.log(0.3), rel=1e-12)


def test_delegation_record_invariants():
    rng = np.random.default_rng(5)
    h = build_hierarchy(list("abcd"), [("a", "b"), ("b", "c"), ("a", "d")])
    H = rng.uniform(size=(50, 4))
    rep = delegation_report(H, h)
    mcm = mcm_forward(H, h)
    assert rep.records
    for d, i, j, hi, hj in rep.records:
        assert j in h.descendants[i] and i != j
        assert mcm[d, i] == hj and hj > hi
    assert set(rep.rates) == {0, 1}


def test_labels_closed_by_strategy_helper():
    rng = np.random.default_rng(0)
    h = build_hierarchy(list("abc"), [("a", "b"), ("b", "c")])
    Y = consistent_labels(rng, h, 20)
    assert np.array_equal(close_labels(Y, h), Y)
