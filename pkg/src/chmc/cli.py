"""Command-line front end.

    chmc synth1 | synth2 | ablation | train    run an experiment
    chmc eval                                  score a checkpoint on a dataset split
    chmc dump-boundaries                       decision-boundary grids of a 2-D checkpoint
    chmc dataset-info                          shapes and hierarchy statistics

Settings come from an optional TOML file (``[experiment]`` section or top-level
keys), then from ``--from-manifest``, then from flags; later sources win.
Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import constraint, experiments, presets
from .errors import ConfigError, DataError, InvalidConfig, SchemaMismatch
from .experiments import ExperimentConfig
from .metrics import au_prc, violation_audit
from .model import load_checkpoint

log = logging.getLogger("chmc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfig(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# flag name -> (type, help); each maps onto the ExperimentConfig field of the same name
_EXPERIMENT_FLAGS = {
    "output_dir": (str, "results directory"),
    "n_runs": (int, "independent runs; seeds are base_seed + k"),
    "base_seed": (int, "seed of the first run"),
    "workers": (int, "worker processes for independent runs"),
    "n_points": (int, "synthetic points per run (split 50/50)"),
    "epochs": (int, "synthetic full-batch epochs"),
    "hidden_dim": (int, "hidden units (synthetic, or default for unknown datasets)"),
    "learning_rate": (float, "Adam learning rate for synthetic runs"),
    "steps": (_int_list, "moving-rectangle steps, e.g. 1,5,9"),
    "dataset": (str, "dataset name, e.g. cellcycle_FUN"),
    "datasets": (_str_list, "comma-separated dataset names for the ablation"),
    "data_root": (str, f"dataset root (default: ${experiments.DATA_ROOT_ENV})"),
    "batch_size": (int, "minibatch size on real datasets"),
    "patience": (int, "early-stopping patience in epochs"),
    "max_epochs": (int, "epoch cap on real datasets"),
    "loss_kind": (str, "mcloss, bce_on_mcm or bce_plain"),
    "boundary_resolution": (int, "grid side for boundary dumps of the first run (0 = off)"),
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--from-manifest", help="re-run with the configuration stored in a manifest.json")
    for name, (typ, help_) in _EXPERIMENT_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chmc", description="Coherent hierarchical multi-label classification experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for kind, help_ in (("synth1", "moving rectangles: C-HMCNN vs f+ vs g+"),
                        ("synth2", "nine rectangles: C-HMCNN vs h+MCM"),
                        ("ablation", "h+ vs h+MCM vs C-HMCNN on validation sets"),
                        ("train", "train, retrain on train+val and evaluate on test")):
        _add_experiment_flags(sub.add_parser(kind, help=help_))

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--data-root", default=None)
    e.add_argument("--output-dir", default=None)

    b = sub.add_parser("dump-boundaries", help="score a 2-D checkpoint on a uniform grid")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--classes", type=_str_list, default=None, help="comma-separated class names (default: all)")
    b.add_argument("--resolution", type=int, default=101)
    b.add_argument("--raw", action="store_true", help="dump raw scores instead of constrained outputs")
    b.add_argument("--output-dir", required=True)

    i = sub.add_parser("dataset-info", help="shapes and hierarchy statistics of a dataset")
    i.add_argument("--dataset", required=True)
    i.add_argument("--data-root", default=None)
    return p


def load_toml(path: str | Path) -> dict:
    try:
        import tomllib as tomli
    except ImportError:  # Python 3.10
        import tomli

    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig(f"config file {path}: {exc}") from None
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update(doc.get("experiment", {}))
    extra = set(k for k, v in doc.items() if isinstance(v, dict)) - {"experiment"}
    if extra:
        raise InvalidConfig(f"unknown config sections: {', '.join(sorted(extra))}")
    return flat


def load_manifest_config(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InvalidConfig(f"manifest {path} not found") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"manifest {path} is not valid JSON: {exc}") from None
    if "config" not in manifest:
        raise InvalidConfig(f"manifest {path} has no config section")
    return dict(manifest["config"])


def resolve_config(kind: str, args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then TOML file, then manifest, then flags."""
    values: dict = {}
    if args.config:
        values.update(load_toml(args.config))
    if args.from_manifest:
        values.update(load_manifest_config(args.from_manifest))
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if values.get("kind", kind) != kind:
        raise InvalidConfig(f"configuration is for {values['kind']!r}, not {kind!r}")
    values["kind"] = kind
    return ExperimentConfig.from_dict(values).validate()


def _run_experiment(kind: str, args) -> int:
    cfg = resolve_config(kind, args)
    log.info("running %s into %s", kind, cfg.output_dir)
    runner = {"synth1": experiments.run_synthetic_1, "synth2": experiments.run_synthetic_2,
              "ablation": experiments.run_ablation, "train": experiments.train_eval}[kind]
    result = runner(cfg)
    manifest = json.loads((Path(cfg.output_dir) / "manifest.json").read_text())
    for f in manifest["failures"]:
        log.warning("run failed: %s", {k: v for k, v in f.items() if k != "error"})
        log.debug(f.get("error", ""))
    empty = (not result) if kind != "train" else result["stats"] is None
    if kind == "ablation":
        empty = all(r["dataset"] == "AVERAGE_RANK" for r in result)
    if empty and manifest["failures"]:
        print(f"all runs failed; see {cfg.output_dir}/manifest.json", file=sys.stderr)
        return EXIT_RUNTIME
    print((Path(cfg.output_dir) / "results.csv").read_text(), end="")
    return EXIT_OK


def _dataset_split(name: str, data_root: str | None, split: str):
    cfg = ExperimentConfig(data_root=data_root or "")
    tr, va, te, h = experiments.load_named_dataset(cfg, name)
    return {"train": tr, "val": va, "test": te}[split], h


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds, h = _dataset_split(args.dataset, args.data_root, args.split)
    if model.hierarchy.names != h.names:
        raise SchemaMismatch("checkpoint classes differ from the dataset's classes")
    if model.net_cfg.input_dim != ds.D:
        raise SchemaMismatch(f"checkpoint expects {model.net_cfg.input_dim} features, dataset has {ds.D}")
    scores = model.predict(ds.X)
    curve = au_prc(scores, ds.Y)
    n_viol, _ = violation_audit(scores, h, max_pairs=0)
    summary = {"dataset": args.dataset, "split": args.split, "auprc": curve.area,
               "n_points": len(curve.recall), "violations": n_viol}
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out / "pr_curve.csv")
        (out / "pr_summary.json").write_text(curve.summary_json() + "\n")
        constraint.delegation_report(model.raw_scores(ds.X), h).to_csv(out / "delegation.csv")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _cmd_dump(args) -> int:
    if args.resolution < 1:
        raise InvalidConfig("resolution must be >= 1")
    model = load_checkpoint(args.checkpoint)
    classes = args.classes
    if classes:
        unknown = [c for c in classes if c not in model.hierarchy.names]
        if unknown:
            raise InvalidConfig(f"unknown classes {unknown}; checkpoint has {list(model.hierarchy.names)}")
    grid = experiments.dump_decision_boundaries(model, classes, args.resolution, args.raw, args.output_dir)
    for c in grid.scores:
        print(c)
    return EXIT_OK


def _depth(h) -> int:
    return max((len(a) for a in h.ancestors), default=0)


def _cmd_info(args) -> int:
    cfg = ExperimentConfig(data_root=args.data_root or "")
    tr, va, te, h = experiments.load_named_dataset(cfg, args.dataset)
    info = {
        "dataset": args.dataset,
        "hierarchy": presets.hierarchy_kind(args.dataset),
        "features": tr.D,
        "classes": h.n,
        "edges": len(h.edges),
        "max_depth": _depth(h),
        "train": len(tr), "val": len(va), "test": len(te),
        "mean_labels_per_point": float(np.mean(tr.Y.sum(axis=1))) if len(tr) else 0.0,
    }
    if args.dataset in presets.HYPERPARAMS:
        info["preset_hidden_dim"], info["preset_learning_rate"] = presets.HYPERPARAMS[args.dataset]
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command in experiments.KINDS:
            return _run_experiment(args.command, args)
        return {"eval": _cmd_eval, "dump-boundaries": _cmd_dump, "dataset-info": _cmd_info}[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
