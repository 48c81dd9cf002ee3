"""Reader for Clus-style hierarchical ARFF files and feature preprocessing.

Supported attribute types: ``numeric``/``real``/``integer``, nominal
``{a,b,...}`` and a single ``hierarchical`` class attribute whose domain is a
comma-separated token list.  ``?`` marks a missing value.  Tree tokens are
"/"-paths and a record joins several labels with "@".  For DAG datasets the
hierarchy comes from a ``.hierarchy`` sidecar (``child parent`` per line);
without one, domain tokens are read as ``parent/child`` edges with ``root``
as the top sentinel.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ParseError, SchemaMismatch, UnknownClass
from .hierarchy import (
    LABEL_SEP,
    PATH_SEP,
    ROOT,
    Hierarchy,
    ancestor_closure,
    parse_dag_hierarchy,
    parse_funcat_hierarchy,
    read_sidecar,
)

MISSING = "?"
_ATTR = re.compile(r"@attribute\s+('(?:[^']*)'|\"(?:[^\"]*)\"|\S+)\s+(.*)$", re.IGNORECASE)


@dataclass
class Attribute:
    name: str
    kind: str  # "numeric" | "nominal" | "hierarchical"
    values: list[str] = field(default_factory=list)


@dataclass
class ArffFile:
    relation: str
    attributes: list[Attribute]
    rows: list[list[str]]
    path: str = ""
    lines: list[int] = field(default_factory=list)  # source line of each row

    @property
    def class_attribute(self) -> Attribute:
        return next(a for a in self.attributes if a.kind == "hierarchical")

    def schema(self):
        return [(a.name, a.kind, tuple(a.values)) for a in self.attributes]


def _split_domain(text: str) -> list[str]:
    return [v.strip().strip("'\"") for v in text.split(",") if v.strip()]


def read_arff(path: str | Path) -> ArffFile:
    path = str(path)
    relation = ""
    attributes: list[Attribute] = []
    rows: list[list[str]] = []
    lines: list[int] = []
    in_data = False
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if in_data:
                fields = next(csv.reader([line], skipinitialspace=True, quotechar="'"))
                if len(fields) != len(attributes):
                    raise ParseError(
                        f"expected {len(attributes)} fields, found {len(fields)}", lineno, len(fields), path
                    )
                rows.append([f.strip() for f in fields])
                lines.append(lineno)
                continue
            low = line.lower()
            if low.startswith("@relation"):
                relation = line.split(None, 1)[1] if " " in line else ""
            elif low.startswith("@attribute"):
                m = _ATTR.match(line)
                if not m:
                    raise ParseError(f"malformed attribute declaration {line!r}", lineno, 1, path)
                name, spec = m.group(1).strip("'\""), m.group(2).strip()
                lspec = spec.lower()
                if lspec in ("numeric", "real", "integer"):
                    attributes.append(Attribute(name, "numeric"))
                elif spec.startswith("{") and spec.endswith("}"):
                    attributes.append(Attribute(name, "nominal", _split_domain(spec[1:-1])))
                elif lspec.startswith("hierarchical"):
                    attributes.append(Attribute(name, "hierarchical", _split_domain(spec[len("hierarchical"):])))
                else:
                    raise ParseError(f"unsupported attribute type {spec!r}", lineno, m.start(2) + 1, path)
            elif low.startswith("@data"):
                in_data = True
            else:
                raise ParseError(f"unexpected header line {line!r}", lineno, 1, path)
    if sum(a.kind == "hierarchical" for a in attributes) != 1:
        raise ParseError("expected exactly one hierarchical class attribute", None, None, path)
    return ArffFile(relation, attributes, rows, path, lines)


def _sidecar_for(path: str) -> Path | None:
    p = Path(path)
    stem = p.name[:-5] if p.name.endswith(".arff") else p.name
    candidates = [p.with_name(stem + ".hierarchy")]
    for tag in (".train", ".valid", ".val", ".test", ".trainvalid"):
        if stem.endswith(tag):
            candidates.append(p.with_name(stem[: -len(tag)] + ".hierarchy"))
    return next((c for c in candidates if c.exists()), None)


def hierarchy_from_arff(arff: ArffFile, kind: str) -> Hierarchy:
    domain = arff.class_attribute.values
    if kind == "tree":
        return parse_funcat_hierarchy(domain)[0]
    if kind != "dag":
        raise ValueError(f"hierarchy kind must be 'tree' or 'dag', got {kind!r}")
    sidecar = _sidecar_for(arff.path)
    if sidecar is not None:
        return read_sidecar(sidecar)
    pairs = []
    for tok in domain:
        parts = tok.split(PATH_SEP)
        if len(parts) != 2:
            raise ParseError(f"DAG edge token {tok!r} is not 'parent/child'", None, None, arff.path)
        parent, child = parts
        pairs.append((child, parent))
    return parse_dag_hierarchy(pairs)


def encode_labels(arff: ArffFile, h: Hierarchy, kind: str) -> np.ndarray:
    col = [i for i, a in enumerate(arff.attributes) if a.kind == "hierarchical"][0]
    Y = np.zeros((len(arff.rows), h.n), dtype=np.int8)
    for r, row in enumerate(arff.rows):
        token = row[col]
        if token == MISSING or not token:
            continue
        ids = []
        for lab in token.split(LABEL_SEP):
            lab = lab.strip()
            if kind == "dag" and PATH_SEP in lab:
                lab = lab.split(PATH_SEP)[-1]
            if lab == ROOT:
                continue
            if lab not in h.index:
                raise UnknownClass(f"{arff.path}: record {r + 1} uses undeclared class {lab!r}")
            ids.append(h.index[lab])
        Y[r] = ancestor_closure(ids, h)
    return Y


@dataclass
class PreprocessStats:
    impute: np.ndarray  # per output column; training mean for numeric, 0 for one-hot
    means: np.ndarray  # per output column, after imputation
    stds: np.ndarray
    numeric_means: dict[str, float]
    vocab: dict[str, list[str]]
    feature_names: list[str]


def _line(arff: ArffFile, r: int):
    return arff.lines[r] if r < len(arff.lines) else None


def _raw_features(arff: ArffFile):
    """Numeric columns (NaN where missing) and one-hot blocks (zeros where missing)."""
    cols, names = [], []
    for j, a in enumerate(arff.attributes):
        if a.kind == "numeric":
            vals = np.empty(len(arff.rows))
            for r, row in enumerate(arff.rows):
                v = row[j]
                if v == MISSING:
                    vals[r] = np.nan
                else:
                    try:
                        vals[r] = float(v)
                    except ValueError:
                        raise ParseError(f"non-numeric value {v!r} for attribute {a.name!r}",
                                         _line(arff, r), j + 1, arff.path) from None
            cols.append(vals[:, None])
            names.append(a.name)
        elif a.kind == "nominal":
            block = np.zeros((len(arff.rows), len(a.values)))
            pos = {v: k for k, v in enumerate(a.values)}
            for r, row in enumerate(arff.rows):
                v = row[j].strip("'\"")
                if v == MISSING:
                    continue
                if v not in pos:
                    raise ParseError(f"value {v!r} not in domain of {a.name!r}", _line(arff, r), j + 1, arff.path)
                block[r, pos[v]] = 1.0
            cols.append(block)
            names.extend(f"{a.name}={v}" for v in a.values)
    X = np.hstack(cols) if cols else np.zeros((len(arff.rows), 0))
    return X, names


def fit_preprocess(train: ArffFile) -> PreprocessStats:
    X, names = _raw_features(train)
    numeric = _numeric_mask(train)
    impute = np.zeros(X.shape[1])
    for j in np.flatnonzero(numeric):
        present = X[~np.isnan(X[:, j]), j]
        impute[j] = present.mean() if present.size else 0.0
    Xi = np.where(np.isnan(X), impute[None, :], X)
    numeric_means = {n: float(m) for n, m, c in zip(names, impute, numeric) if c}
    vocab = {a.name: list(a.values) for a in train.attributes if a.kind == "nominal"}
    return PreprocessStats(impute, Xi.mean(axis=0), Xi.std(axis=0), numeric_means, vocab, names)


def _numeric_mask(arff: ArffFile) -> np.ndarray:
    mask = []
    for a in arff.attributes:
        if a.kind == "numeric":
            mask.append(True)
        elif a.kind == "nominal":
            mask.extend([False] * len(a.values))
    return np.array(mask, dtype=bool)


def apply_preprocess(arff: ArffFile, stats: PreprocessStats) -> np.ndarray:
    """Impute with training means, then standardize; zero-variance columns map to 0."""
    X, _ = _raw_features(arff)
    X = np.where(np.isnan(X), stats.impute[None, :], X)
    safe = np.where(stats.stds > 0, stats.stds, 1.0)
    Z = (X - stats.means[None, :]) / safe[None, :]
    Z[:, stats.stds == 0] = 0.0
    return Z


def load_arff_dataset(train_path, val_path, test_path, kind: str = "tree"):
    """Read pre-split ARFF files; returns (train, val, test, hierarchy)."""
    files = [read_arff(p) for p in (train_path, val_path, test_path)]
    ref = files[0].schema()
    for f in files[1:]:
        if f.schema() != ref:
            raise SchemaMismatch(f"{f.path}: attribute declarations differ from {files[0].path}")
    h = hierarchy_from_arff(files[0], kind)
    stats = fit_preprocess(files[0])
    out = []
    for f, split in zip(files, ("train", "val", "test")):
        X = apply_preprocess(f, stats)
        Y = encode_labels(f, h, kind)
        out.append(Dataset(X, Y, h, split, list(stats.feature_names)))
    return out[0], out[1], out[2], h
