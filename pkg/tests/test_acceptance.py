"""Acceptance criteria 1-10, one PASS/FAIL/SKIP line each.

The lines are printed inline and repeated in the terminal summary (see conftest).
Criteria 6 and 7 train the synthetic experiments end to end and dominate the
runtime. Set CHMC_ACCEPTANCE_OUT to keep their result directories.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from chmc import experiments
from chmc.cli import main
from chmc.constraint import bce_on_mcm, mcloss, mcloss_graph, mcm_forward
from chmc.diffgraph import Tape
from chmc.errors import MissingDataset
from chmc.experiments import ExperimentConfig, run_ablation, run_synthetic_1, run_synthetic_2, train_eval
from chmc.hierarchy import build_hierarchy, mask_matrix
from chmc.metrics import au_prc, violation_audit
from chmc import presets

import oracles
from arff_fixtures import write_tree_dataset

REPORT: list[str] = []

# epoch budgets the synthetic criteria are checked at
SYNTH2_EPOCHS = 20000
SYNTH1_EPOCHS = 20000


def report(k, ok, detail):
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


def skip(k, why):
    line = f"criterion {k:>2}: SKIP  {why}"
    REPORT.append(line)
    print(line)
    pytest.skip(why)


def out_dir(tmp_path_factory, name):
    keep = os.environ.get("CHMC_ACCEPTANCE_OUT")
    if keep:
        d = Path(keep) / name
        d.mkdir(parents=True, exist_ok=True)
        return d
    return tmp_path_factory.mktemp(name)


def random_dag(rng, max_n=64):
    n = int(rng.integers(1, max_n + 1))
    order = rng.permutation(n)
    density = rng.uniform(0, 0.5) * (4.0 / n if n > 8 else 1.0)
    a, b = np.triu_indices(n, 1)
    keep = rng.random(a.size) < density
    names = [f"c{i}" for i in range(n)]
    edges = [(names[order[i]], names[order[j]]) for i, j in zip(a[keep], b[keep])]
    return build_hierarchy(names, edges)


# ---- 1-5: exact and numeric checks ----------------------------------------------

def test_c01_coherence_fuzz():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        h = random_dag(rng)
        H = rng.uniform(size=(int(rng.integers(1, 4)), h.n))
        bad += violation_audit(mcm_forward(H, h), h, max_pairs=0)[0]
    dt = time.perf_counter() - t0
    report(1, bad == 0 and dt < 10, f"10000 fuzzed hierarchies (n<=64): {bad} violations in {dt:.2f}s (limit 10s)")


def test_c02_two_class_gradients():
    two = build_hierarchy(["A", "B"], [("B", "A")])
    h, y = np.array([0.3, 0.1]), np.array([0, 1])
    _, gp = bce_on_mcm(h, y, two)
    _, gm = mcloss(h, y, two)
    errs = [abs(gp[0] - (-1 / (h[0] - 1) - 1 / h[0])), abs(gp[1]),
            abs(gm[0] - 1 / (1 - h[0])), abs(gm[1] + 1 / h[1])]
    report(2, max(errs) <= 1e-9,
           f"plain=({gp[0]:.4f}, {gp[1]:.4f}) max-constraint=({gm[0]:.4f}, {gm[1]:.4f}); max error {max(errs):.1e}")


def test_c03_star_hierarchy():
    worst, sign_ok = 0.0, True
    for n in (1, 10, 50):
        names = ["A"] + [f"A{i}" for i in range(1, n + 1)]
        star = build_hierarchy(names, [(f"A{i}", "A") for i in range(1, n + 1)])
        rng = np.random.default_rng(n)
        y = np.r_[0, np.ones(n, dtype=int)]
        for hA in np.linspace(0.01, 0.99, 99):
            h = np.r_[hA, rng.uniform(0.01, 0.99, size=n)]
            _, g = mcloss(h, y, star)
            worst = max(worst, abs(g[0] - 1 / (1 - hA)))
            _, gp = bce_on_mcm(h, y, star)
            if h[1:].max() < hA:  # h_A is the max over D_A, so the plain gradient flows to it
                threshold = n / (n + 1)
                if abs(hA - threshold) > 1e-9 and (gp[0] > 0) != (hA > threshold):
                    sign_ok = False
    report(3, worst <= 1e-12 and sign_ok,
           f"n in {{1,10,50}}: max |dL/dh_A - 1/(1-h_A)| = {worst:.1e}; plain sign flips only above n/(n+1): {sign_ok}")


def _fd_ok(build, values, rtol=1e-4):
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    tape.backward(build(tape, *leaves))
    for k, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)

        def f(v, k=k):
            vals = list(values)
            vals[k] = v
            t = Tape()
            return float(build(t, *[t.leaf(x) for x in vals]).value)

        if not oracles.rel_close(analytic, oracles.central_diff(f, values[k]), rtol=rtol):
            return False
    return True


def _fd_cases(rng):
    """op name -> generator of (build, values) with kinks and ties excluded."""
    def affine():
        r, d, m = rng.integers(1, 4, size=3)
        x, W, b = rng.normal(size=(r, d)), rng.normal(size=(m, d)), rng.normal(size=m)
        w = rng.normal(size=(r, m))
        return lambda t, x, W, b: t.sum(t.mul(t.affine(x, W, b), w)), [x, W, b]

    def nonlin(kind):
        def case():
            x = rng.normal(size=(2, 3)) * 2
            if kind == "relu":
                x = np.where(np.abs(x) < 1e-3, 0.5, x)
            w = rng.normal(size=x.shape)
            return lambda t, x: t.sum(t.mul(t.nonlinearity(x, kind), w)), [x]
        return case

    def dropout():
        x, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        seed = int(rng.integers(2**31))
        return (lambda t, x: t.sum(t.mul(t.dropout(x, 0.5, True, np.random.default_rng(seed)), w)), [x])

    def mul():
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        return lambda t, a, b: t.sum(t.mul(a, b)), [a, b]

    def add():
        a, b, w = rng.normal(size=(3,)), rng.normal(size=(3,)), rng.normal(size=(3,))
        return lambda t, a, b: t.sum(t.mul(t.add(a, b), w)), [a, b]

    def masked_max():
        n = int(rng.integers(2, 7))
        mask = np.eye(n, dtype=bool) | (rng.random((n, n)) < 0.4)
        h = rng.permutation(np.linspace(0.05, 0.95, n)) + rng.uniform(-0.01, 0.01, size=n)  # no ties
        w = rng.normal(size=n)
        return lambda t, h: t.sum(t.mul(t.masked_row_max(h, mask), w)), [h]

    def bce():
        p = rng.uniform(0.05, 0.95, size=(2, 4))
        y = (rng.random((2, 4)) < 0.5).astype(float)
        return lambda t, p: t.bce(p, y), [p]

    def mc_loss():
        n = int(rng.integers(2, 7))
        h = random_dag(rng, max_n=n)
        hv = rng.permutation(np.linspace(0.05, 0.95, h.n)) + rng.uniform(-0.01, 0.01, size=h.n)
        y = np.zeros(h.n, dtype=int)
        for i in np.flatnonzero(rng.random(h.n) < 0.4):
            y[list(h.ancestors[i])] = 1
        return lambda t, x: mcloss_graph(t, x, y, h), [hv]

    return {"affine": affine, "tanh": nonlin("tanh"), "sigmoid": nonlin("sigmoid"), "relu": nonlin("relu"),
            "dropout": dropout, "mul": mul, "add": add, "masked_row_max": masked_max, "bce": bce,
            "max constraint loss": mc_loss}


def test_c04_finite_differences():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    failed = {}
    for name, case in _fd_cases(rng).items():
        failed[name] = sum(not _fd_ok(*case()) for _ in range(100))
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in failed.items() if v}
    report(4, not bad and dt < 30,
           f"{len(failed)} ops x 100 cases at rtol 1e-4: failures {bad or 'none'} in {dt:.2f}s (limit 30s)")


def test_c05_auprc_oracle():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    mismatched, worst = 0, 0.0
    for _ in range(500):
        r, c = rng.integers(1, 11), rng.integers(1, 6)
        levels = int(rng.integers(2, 6))
        scores = rng.integers(0, levels, size=(r, c)) / (levels - 1) if rng.random() < 0.5 else rng.uniform(size=(r, c))
        labels = (rng.random((r, c)) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[rng.integers(r), rng.integers(c)] = 1
        curve = au_prc(scores, labels)
        pts = oracles.pr_points(scores, labels)
        mismatched += curve.points != pts
        worst = max(worst, abs(curve.area - oracles.trapezoid(pts)))
    dt = time.perf_counter() - t0
    report(5, mismatched == 0 and worst <= 1e-3 and dt < 10,
           f"500 instances: {mismatched} point-set mismatches, max area error {worst:.1e}, {dt:.2f}s")


# ---- 6-7: synthetic experiments --------------------------------------------------

def test_c06_nine_rectangles(tmp_path_factory):
    cfg = ExperimentConfig(kind="synth2", output_dir=str(out_dir(tmp_path_factory, "synth2")),
                           epochs=SYNTH2_EPOCHS, n_runs=10)
    rows = {r["model"]: r for r in run_synthetic_2(cfg)}
    c, b = rows["C-HMCNN"], rows["h+MCM"]
    ok = (c["n"] == 10 and b["n"] == 10 and c["mean"] >= 0.95 and c["std"] <= 0.02
          and b["mean"] <= c["mean"] and b["std"] >= 2 * c["std"])
    report(6, ok, f"{SYNTH2_EPOCHS} epochs, 10 runs: C-HMCNN {c['mean']:.3f} ({c['std']:.3f}), "
                  f"h+MCM {b['mean']:.3f} ({b['std']:.3f})")


def test_c07_moving_rectangles(tmp_path_factory):
    cfg = ExperimentConfig(kind="synth1", output_dir=str(out_dir(tmp_path_factory, "synth1")),
                           epochs=SYNTH1_EPOCHS, n_runs=10)
    rows = run_synthetic_1(cfg)
    mean = {(r["step"], r["model"]): r["mean"] for r in rows}
    problems = []
    for s in range(1, 10):
        f, g, c = mean[s, "f+"], mean[s, "g+"], mean[s, "C-HMCNN"]
        if s <= 3 and not g > f:
            problems.append(f"step {s}: g+ {g:.3f} <= f+ {f:.3f}")
        if s >= 8 and not f > g:
            problems.append(f"step {s}: f+ {f:.3f} <= g+ {g:.3f}")
        if c < max(f, g) - 0.02:
            problems.append(f"step {s}: C-HMCNN {c:.3f} < max {max(f, g):.3f} - 0.02")
    table = " ".join(f"{s}:{mean[s, 'C-HMCNN']:.3f}/{mean[s, 'f+']:.3f}/{mean[s, 'g+']:.3f}" for s in range(1, 10))
    report(7, not problems, f"{SYNTH1_EPOCHS} epochs, 10 runs, step:C-HMCNN/f+/g+ {table}"
                            + (f"; {'; '.join(problems)}" if problems else ""))


# ---- 8-9: real datasets (conditional) -------------------------------------------

def _available(names):
    try:
        root = experiments.data_root(ExperimentConfig())
    except MissingDataset:
        return False
    try:
        for n in names:
            experiments.find_dataset_files(root, n)
    except MissingDataset:
        return False
    return True


def test_c08_ablation_ordering(tmp_path_factory):
    if not _available(presets.FUNCAT):
        skip(8, f"conditional: FunCat files not found under ${experiments.DATA_ROOT_ENV}")
    cfg = ExperimentConfig(kind="ablation", output_dir=str(out_dir(tmp_path_factory, "ablation")), n_runs=1)
    rows = [r for r in run_ablation(cfg) if r["dataset"] != "AVERAGE_RANK"]
    auc = {(r["dataset"], r["model"]): r["val_auprc"] for r in rows}
    ordered = all(auc[d, "C-HMCNN"] >= auc[d, "h+MCM"] >= auc[d, "h+"] - 0.002 for d in presets.FUNCAT)
    strict = sum(auc[d, "C-HMCNN"] > auc[d, "h+"] for d in presets.FUNCAT)
    report(8, ordered and strict >= 7, f"ordering holds on all datasets: {ordered}; strict wins {strict}/8")


def test_c09_cellcycle_reproduction(tmp_path_factory):
    if not _available(["cellcycle_FUN"]):
        skip(9, f"conditional: cellcycle_FUN not found under ${experiments.DATA_ROOT_ENV}")
    cfg = ExperimentConfig(kind="train", dataset="cellcycle_FUN", n_runs=10,
                           output_dir=str(out_dir(tmp_path_factory, "cellcycle")))
    st = train_eval(cfg)["stats"]
    report(9, st is not None and abs(st["mean"] - 0.255) <= 0.015 and st["std"] <= 0.005,
           f"cellcycle_FUN 10 runs: {st and round(st['mean'], 4)} ({st and round(st['std'], 4)}), target 0.255 +- 0.015")


# ---- 10: determinism -------------------------------------------------------------

def test_c10_manifest_rerun_is_bitwise(tmp_path, monkeypatch, capsys):
    root = tmp_path / "data"
    write_tree_dataset(root, "toy_FUN")
    monkeypatch.setenv(experiments.DATA_ROOT_ENV, str(root))
    commands = {
        "synth1": ["--n-runs", "2", "--epochs", "50", "--n-points", "300", "--steps", "1,9"],
        "synth2": ["--n-runs", "2", "--epochs", "50", "--n-points", "300"],
        "train": ["--dataset", "toy_FUN", "--n-runs", "2", "--hidden-dim", "16", "--max-epochs", "5"],
    }
    same = {}
    for kind, flags in commands.items():
        first, second = tmp_path / f"{kind}_a", tmp_path / f"{kind}_b"
        assert main([kind, "--output-dir", str(first), *flags]) == 0
        assert main([kind, "--from-manifest", str(first / "manifest.json"), "--output-dir", str(second)]) == 0
        h1 = json.loads((first / "manifest.json").read_text())["hashes"]
        h2 = json.loads((second / "manifest.json").read_text())["hashes"]
        same[kind] = bool(h1) and h1 == h2 and (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()
    capsys.readouterr()
    report(10, all(same.values()), f"re-run from manifest, results.csv sha256 equal: {same}")
