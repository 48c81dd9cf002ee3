"""Experiment orchestration: synthetic worlds, ablation, single-dataset pipeline.

Every ``run_*`` function writes ``results.csv``, ``manifest.json`` and a
``runs/`` directory with the raw per-run values to ``cfg.output_dir``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, constraint, presets
from .data import (
    Dataset,
    concat,
    gen_moving_rectangles,
    gen_nine_rectangles,
    split_dataset,
)
from .errors import InvalidConfig, MissingDataset, NonPlanarInput
from .hierarchy import build_hierarchy
from .metrics import au_prc, average_ranks, run_statistics, violation_audit
from .model import (
    Model,
    NetworkConfig,
    TrainConfig,
    retrain_full,
    save_checkpoint,
    train,
)

DATA_ROOT_ENV = "CHMC_DATA_ROOT"
MODELS_SYNTH1 = ("C-HMCNN", "f+", "g+")
MODELS_SYNTH2 = ("C-HMCNN", "h+MCM")
MODELS_ABLATION = ("h+", "h+MCM", "C-HMCNN")
ABLATION_LOSS = {"h+": "bce_plain", "h+MCM": "bce_on_mcm", "C-HMCNN": "mcloss"}
KINDS = ("synth1", "synth2", "ablation", "train")
DEFAULT_HIDDEN = {"synth1": 4, "synth2": 7}


@dataclass
class ExperimentConfig:
    kind: str = "synth1"
    output_dir: str = "results"
    n_runs: int = 10
    base_seed: int = 0
    workers: int = 1
    # synthetic worlds
    n_points: int = 5000
    epochs: int = 20000
    hidden_dim: int | None = None  # None: 4 for synth1, 7 for synth2, 500 for unknown real datasets
    hidden_nonlinearity: str = "tanh"
    learning_rate: float = 1e-2
    steps: list[int] = field(default_factory=lambda: list(range(1, 10)))
    # real datasets
    dataset: str = ""
    datasets: list[str] = field(default_factory=list)
    data_root: str = ""
    hidden_layers: int = 2
    dropout_rate: float = 0.7
    weight_decay: float = 1e-5
    batch_size: int = 4
    patience: int = 20
    max_epochs: int = 200
    loss_kind: str = "mcloss"
    # grid side for decision-boundary dumps of the first run per step; 0 disables
    boundary_resolution: int = 0

    def hidden(self) -> int:
        if self.hidden_dim is not None:
            return self.hidden_dim
        return DEFAULT_HIDDEN.get(self.kind, 500)

    def seeds(self) -> list[int]:
        return [self.base_seed + k for k in range(self.n_runs)]

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise InvalidConfig(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        for name in ("n_runs", "workers", "n_points", "epochs", "hidden_layers", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.boundary_resolution < 0:
            raise InvalidConfig("boundary_resolution must be >= 0")
        if not self.steps or any(not 1 <= int(s) <= 9 for s in self.steps):
            raise InvalidConfig(f"steps must lie in 1..9, got {self.steps}")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.loss_kind not in ABLATION_LOSS.values():
            raise InvalidConfig(f"unknown loss_kind {self.loss_kind!r}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.steps = [int(s) for s in cfg.steps]
        cfg.datasets = list(cfg.datasets)
        return cfg


def synthetic_train_config(cfg: ExperimentConfig, loss_kind: str, output: str | None = None) -> TrainConfig:
    """Full-batch Adam with a fixed epoch budget and no weight decay."""
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        weight_decay=0.0,
        batch_size=None,
        max_epochs=cfg.epochs,
        patience=None,
        loss_kind=loss_kind,
        output=output,
    )


def _net(cfg: ExperimentConfig, n_out: int, seed: int, input_dim: int = 2) -> NetworkConfig:
    return NetworkConfig(input_dim, [cfg.hidden()], n_out, cfg.hidden_nonlinearity, 0.0, seed)


def two_rectangle_models(train_set: Dataset, cfg: ExperimentConfig, seed: int) -> dict[str, Callable]:
    """Train h (MCLoss), f (BCE) and g (BCE on A and B without A); return scorers for (A, B)."""
    h_res = train(train_set, None, _net(cfg, 2, seed), synthetic_train_config(cfg, "mcloss"))
    f_res = train(train_set, None, _net(cfg, 2, seed), synthetic_train_config(cfg, "bce_plain", "min_ancestors"))

    flat = build_hierarchy(["A", "B\\A"], [])
    Yg = np.stack([train_set.Y[:, 0], train_set.Y[:, 1] & (1 - train_set.Y[:, 0])], axis=1)
    g_set = Dataset(train_set.X, Yg, flat, "train")
    g_res = train(g_set, None, _net(cfg, 2, seed), synthetic_train_config(cfg, "bce_plain", "raw"))

    def g_plus(X):
        g = g_res.model.predict(X)
        a, b = constraint.g_plus_combine(g[:, 0], g[:, 1])
        return np.stack([a, b], axis=1)

    return {"C-HMCNN": h_res.model.predict, "f+": f_res.model.predict, "g+": g_plus,
            "_models": {"h": h_res.model, "f": f_res.model, "g": g_res.model}}


def _synth1_run(args):
    cfg, step, seed = args
    ds = gen_moving_rectangles(step, cfg.n_points, seed)
    tr, _, te = split_dataset(ds)
    scorers = two_rectangle_models(tr, cfg, seed)
    if cfg.boundary_resolution and seed == cfg.base_seed:
        d = Path(cfg.output_dir) / "runs" / f"step{step}_seed{seed}"
        for tag, model in scorers["_models"].items():
            dump_decision_boundaries(model, resolution=cfg.boundary_resolution, raw=True,
                                     directory=d / f"boundaries_{tag}")
    return {m: au_prc(scorers[m](te.X), te.Y).area for m in MODELS_SYNTH1}


def _synth2_run(args):
    cfg, seed = args
    tr, _, te = split_dataset(gen_nine_rectangles(cfg.n_points, seed))
    out = {}
    for name, loss in (("C-HMCNN", "mcloss"), ("h+MCM", "bce_on_mcm")):
        net = _net(cfg, 9, seed)
        model = train(tr, None, net, synthetic_train_config(cfg, loss)).model
        scores = model.predict(te.X)
        out[name] = au_prc(scores, te.Y).area
        out[name + ":violations"] = violation_audit(scores, tr.hierarchy, max_pairs=0)[0]
    return out


def _safe(fn):
    def wrapped(args):
        try:
            return True, fn(args)
        except Exception as exc:  # recorded in the manifest instead of the results
            return False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    return wrapped


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _guarded_synth1(args):
    return _safe(_synth1_run)(args)


def _guarded_synth2(args):
    return _safe(_synth2_run)(args)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: ExperimentConfig, failures: list, files: list[str], extra: dict | None = None):
    manifest = {
        "config": asdict(cfg),
        "seeds": cfg.seeds(),
        "versions": {
            "chmc": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "platform": platform.platform(),
        },
        "failures": failures,
        "hashes": {f: _sha256(out / f) for f in files if (out / f).exists()},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _write_runs(out: Path, raw: dict) -> None:
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    for key, value in raw.items():
        with open(runs / f"{key}.json", "w") as fh:
            json.dump(value, fh, indent=2, sort_keys=True)


def run_synthetic_1(cfg: ExperimentConfig) -> list[dict]:
    """Moving rectangles: C-HMCNN, f+ and g+ at every step, ``n_runs`` seeds each."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, step, seed) for step in cfg.steps for seed in cfg.seeds()]
    results = _map(_guarded_synth1, jobs, cfg.workers)

    per_step: dict[int, dict[str, list[float]]] = {s: {m: [] for m in MODELS_SYNTH1} for s in cfg.steps}
    raw, failures = {}, []
    for (_, step, seed), (ok, value) in zip(jobs, results):
        if not ok:
            failures.append({"step": step, "seed": seed, "error": value})
            continue
        raw[f"step{step}_seed{seed}"] = value
        for m in MODELS_SYNTH1:
            per_step[step][m].append(value[m])

    rows = []
    for step in cfg.steps:
        for m in MODELS_SYNTH1:
            vals = per_step[step][m]
            if not vals:
                continue
            st = run_statistics(vals)
            rows.append({"step": step, "model": m, "mean": st.mean, "std": st.std, "n": len(vals)})
    _write_csv(out / "results.csv", ["step", "model", "mean", "std", "n"], rows)
    _write_runs(out, raw)
    write_manifest(out, cfg, failures, ["results.csv"])
    return rows


def run_synthetic_2(cfg: ExperimentConfig) -> list[dict]:
    """Nine rectangles: C-HMCNN against h+MCM trained with plain BCE."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed) for seed in cfg.seeds()]
    results = _map(_guarded_synth2, jobs, cfg.workers)
    vals = {m: [] for m in MODELS_SYNTH2}
    raw, failures = {}, []
    for (_, seed), (ok, value) in zip(jobs, results):
        if not ok:
            failures.append({"seed": seed, "error": value})
            continue
        raw[f"seed{seed}"] = value
        for m in MODELS_SYNTH2:
            vals[m].append(value[m])
    rows = []
    for m in MODELS_SYNTH2:
        if vals[m]:
            st = run_statistics(vals[m])
            rows.append({"model": m, **asdict(st), "n": len(vals[m])})
    _write_csv(out / "results.csv", ["model", "mean", "std", "min", "median", "max", "n"], rows)
    _write_runs(out, raw)
    write_manifest(out, cfg, failures, ["results.csv"])
    return rows


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---- real datasets -----------------------------------------------------------

def data_root(cfg: ExperimentConfig) -> Path:
    root = cfg.data_root or os.environ.get(DATA_ROOT_ENV, "")
    if not root:
        raise MissingDataset(f"no dataset root: set {DATA_ROOT_ENV} or data_root")
    return Path(root)


def find_dataset_files(root: Path, name: str) -> tuple[Path, Path, Path]:
    def one(suffixes):
        for suffix in suffixes:
            hits = sorted(root.rglob(f"{name}.{suffix}.arff"))
            if hits:
                return hits[0]
        return None

    files = (one(["train"]), one(["valid", "val"]), one(["test"]))
    if any(f is None for f in files):
        raise MissingDataset(f"dataset {name!r} not found under {root}")
    return files


def load_named_dataset(cfg: ExperimentConfig, name: str):
    from .arff import load_arff_dataset

    files = find_dataset_files(data_root(cfg), name)
    return load_arff_dataset(*files, kind=presets.hierarchy_kind(name))


def real_configs(cfg: ExperimentConfig, name: str, D: int, n: int, seed: int, loss_kind: str):
    hidden, lr = presets.HYPERPARAMS.get(name, (cfg.hidden(), cfg.learning_rate))
    net = NetworkConfig(D, [hidden] * cfg.hidden_layers, n, "relu", cfg.dropout_rate, seed)
    tc = TrainConfig(
        learning_rate=lr,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        loss_kind=loss_kind,
    )
    return net, tc


def run_ablation(cfg: ExperimentConfig) -> list[dict]:
    """h+, h+MCM and C-HMCNN on FunCat validation sets, with stopping epochs."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = cfg.datasets or presets.FUNCAT
    rows, failures, table = [], [], {}
    for name in names:
        try:
            tr, va, _, h = load_named_dataset(cfg, name)
        except Exception as exc:
            failures.append({"dataset": name, "error": f"{type(exc).__name__}: {exc}"})
            continue
        table[name] = {}
        for model_name in MODELS_ABLATION:
            aucs, epochs = [], []
            for seed in cfg.seeds():
                net, tc = real_configs(cfg, name, tr.D, h.n, seed, ABLATION_LOSS[model_name])
                res = train(tr, va, net, tc)
                aucs.append(au_prc(res.model.predict(va.X), va.Y).area)
                epochs.append(res.best_epoch)
            table[name][model_name] = float(np.mean(aucs))
            rows.append({"dataset": name, "model": model_name, "val_auprc": float(np.mean(aucs)),
                         "best_epoch": float(np.mean(epochs))})
    for model_name, rank in average_ranks(table).items():
        rows.append({"dataset": "AVERAGE_RANK", "model": model_name, "val_auprc": rank, "best_epoch": ""})
    _write_csv(out / "results.csv", ["dataset", "model", "val_auprc", "best_epoch"], rows)
    write_manifest(out, cfg, failures, ["results.csv"])
    if not table:
        raise MissingDataset(f"none of the datasets {list(names)} could be loaded")
    return rows


def train_eval(cfg: ExperimentConfig) -> dict:
    """Early-stopped training, retraining on train+val, test evaluation and artifacts."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.dataset
    tr, va, te, h = load_named_dataset(cfg, name)
    full = concat(tr, va)
    areas, failures, report = [], [], {}
    for seed in cfg.seeds():
        run_dir = out / "runs" / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            net, tc = real_configs(cfg, name, tr.D, h.n, seed, cfg.loss_kind)
            first = train(tr, va, net, tc)
            first.write_log(run_dir / "epoch_log.csv")
            final = retrain_full(net, tc, full, first.best_epoch)
            scores = final.model.predict(te.X)
            curve = au_prc(scores, te.Y)
            curve.to_csv(run_dir / "pr_curve.csv")
            (run_dir / "pr_summary.json").write_text(curve.summary_json() + "\n")
            n_viol, _ = violation_audit(scores, h, max_pairs=0)
            constraint.delegation_report(final.model.raw_scores(te.X), h).to_csv(run_dir / "delegation.csv")
            save_checkpoint(final.model, run_dir / "model.npz", {"dataset": name, "best_epoch": first.best_epoch})
            areas.append(curve.area)
            report[f"seed{seed}"] = {"test_auprc": curve.area, "best_epoch": first.best_epoch,
                                     "violations": n_viol}
        except Exception as exc:
            failures.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    rows = [{"seed": k, **v} for k, v in report.items()]
    if areas:
        st = run_statistics(areas)
        rows.append({"seed": "summary", "test_auprc": st.mean, "best_epoch": st.std, "violations": ""})
    _write_csv(out / "results.csv", ["seed", "test_auprc", "best_epoch", "violations"], rows)
    write_manifest(out, cfg, failures, ["results.csv"])
    return {"runs": report, "stats": asdict(run_statistics(areas)) if areas else None}


# ---- decision boundaries -----------------------------------------------------

@dataclass
class DecisionBoundaryGrid:
    resolution: int
    xy: np.ndarray  # (resolution**2, 2)
    scores: dict[str, np.ndarray]

    def to_csv(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for cls, s in self.scores.items():
            safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in cls)
            p = d / f"boundary_{safe}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "score"])
                for (x, y), v in zip(self.xy, s):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
            paths.append(p)
        return paths


def dump_decision_boundaries(model: Model, classes=None, resolution: int = 101, raw: bool = False,
                             directory: str | Path | None = None) -> DecisionBoundaryGrid:
    """Scores of a 2-D input model on a uniform grid over the unit square."""
    if model.net_cfg.input_dim != 2:
        raise NonPlanarInput(f"model takes {model.net_cfg.input_dim}-dimensional inputs, need 2")
    ticks = np.linspace(0.0, 1.0, resolution)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
    s = model.raw_scores(xy) if raw else model.predict(xy)
    names = model.hierarchy.names
    classes = list(names) if classes is None else list(classes)
    grid = DecisionBoundaryGrid(resolution, xy, {c: s[:, names.index(c)] for c in classes})
    if directory is not None:
        grid.to_csv(directory)
    return grid
