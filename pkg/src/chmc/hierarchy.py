"""Class hierarchies: DAG closure, the subclass mask matrix and label closure.

A class ``A`` is a subclass of itself, so every descendant set contains its
own class and the mask matrix has an all-ones diagonal.  Indices follow
declaration order everywhere.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DuplicateClassName,
    InconsistentLabels,
    MalformedPair,
    MalformedPath,
    ShapeMismatch,
    UnknownClass,
)

ROOT = "root"
PATH_SEP = "/"
LABEL_SEP = "@"


@dataclass(frozen=True, eq=False)
class Hierarchy:
    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]  # (parent, child)
    descendants: tuple[tuple[int, ...], ...]
    ancestors: tuple[tuple[int, ...], ...]
    mask: np.ndarray = field(repr=False)
    index: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.names)

    @cached_property
    def max_index(self):
        """Padded subclass lists for vectorized max over D_A."""
        from .diffgraph import RowMaxIndex
        return RowMaxIndex(self.mask)

    @cached_property
    def min_index(self):
        """Padded ancestor lists for vectorized min over ancestors."""
        from .diffgraph import RowMaxIndex
        return RowMaxIndex(self.mask.T)

    def id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownClass(f"unknown class {name!r}") from None

    def strict_descendants(self, i: int) -> tuple[int, ...]:
        return tuple(j for j in self.descendants[i] if j != i)

    def __eq__(self, other):
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return self.names == other.names and set(self.edges) == set(other.edges)

    def __hash__(self):
        return hash((self.names, frozenset(self.edges)))


def _find_cycle(n: int, children: list[list[int]]) -> list[int] | None:
    """Iterative three-colour DFS; returns one cycle as a closed index path."""
    WHITE, GREY, BLACK = 0, 1, 2
    colour = [WHITE] * n
    parent = [-1] * n
    for start in range(n):
        if colour[start] != WHITE:
            continue
        stack = [(start, iter(children[start]))]
        colour[start] = GREY
        while stack:
            v, it = stack[-1]
            for w in it:
                if colour[w] == WHITE:
                    colour[w] = GREY
                    parent[w] = v
                    stack.append((w, iter(children[w])))
                    break
                if colour[w] == GREY:
                    cycle = [v]
                    while cycle[-1] != w:
                        cycle.append(parent[cycle[-1]])
                    cycle.reverse()
                    return cycle + [w]
            else:
                colour[v] = BLACK
                stack.pop()
    return None


def _topological_order(n: int, children: list[list[int]]) -> list[int]:
    indeg = [0] * n
    for cs in children:
        for c in cs:
            indeg[c] += 1
    order = [i for i in range(n) if indeg[i] == 0]
    k = 0
    while k < len(order):
        for c in children[order[k]]:
            indeg[c] -= 1
            if indeg[c] == 0:
                order.append(c)
        k += 1
    return order


def _bits_to_rows(bits: list[int], n: int) -> np.ndarray:
    nbytes = (n + 7) // 8
    raw = b"".join(b.to_bytes(nbytes, "little") for b in bits)
    packed = np.frombuffer(raw, dtype=np.uint8).reshape(len(bits), nbytes)
    return np.unpackbits(packed, axis=1, bitorder="little")[:, :n].astype(bool)


def build_hierarchy(names: Sequence[str], edges: Iterable[tuple[str, str]]) -> Hierarchy:
    """Build a hierarchy from class names and (parent, child) name pairs."""
    names = tuple(names)
    index: dict[str, int] = {}
    for i, name in enumerate(names):
        if name in index:
            raise DuplicateClassName(f"class {name!r} declared twice")
        index[name] = i
    n = len(names)

    edge_ids: list[tuple[int, int]] = []
    seen = set()
    for parent, child in edges:
        for end in (parent, child):
            if end not in index:
                raise UnknownClass(f"edge endpoint {end!r} is not a declared class")
        e = (index[parent], index[child])
        if e not in seen:
            seen.add(e)
            edge_ids.append(e)
    return _from_index_edges(names, index, edge_ids)


def _from_index_edges(names, index, edge_ids) -> Hierarchy:
    n = len(names)
    children: list[list[int]] = [[] for _ in range(n)]
    for p, c in edge_ids:
        children[p].append(c)
    cycle = _find_cycle(n, children)
    if cycle is not None:
        raise CycleDetected([names[i] for i in cycle])

    order = _topological_order(n, children)
    bits = [0] * n
    for v in reversed(order):
        b = 1 << v
        for c in children[v]:
            b |= bits[c]
        bits[v] = b

    mask = _bits_to_rows(bits, n) if n else np.zeros((0, 0), dtype=bool)
    mask.setflags(write=False)
    descendants = tuple(tuple(np.flatnonzero(row).tolist()) for row in mask)
    ancestors = tuple(tuple(np.flatnonzero(col).tolist()) for col in mask.T)
    return Hierarchy(
        names=tuple(names),
        edges=tuple(edge_ids),
        descendants=descendants,
        ancestors=ancestors,
        mask=mask,
        index=dict(index),
    )


def flat_hierarchy(names: Sequence[str]) -> Hierarchy:
    return build_hierarchy(names, [])


def mask_matrix(h: Hierarchy) -> np.ndarray:
    """n x n 0/1 matrix with ``m[i, j] = 1`` iff class j is a subclass of class i."""
    return h.mask.astype(np.float64)


def ancestor_closure(positive: Iterable[int], h: Hierarchy) -> np.ndarray:
    """Smallest hierarchy-consistent 0/1 vector containing ``positive``."""
    y = np.zeros(h.n, dtype=np.int8)
    for i in positive:
        if not 0 <= int(i) < h.n:
            raise UnknownClass(f"class id {i} out of range for {h.n} classes")
        y[list(h.ancestors[int(i)])] = 1
    return y


def close_labels(y: np.ndarray, h: Hierarchy) -> np.ndarray:
    """Ancestor closure applied row-wise to a (batch, n) or (n,) 0/1 array."""
    y = np.asarray(y)
    if y.shape[-1] != h.n:
        raise ShapeMismatch(f"labels have {y.shape[-1]} columns, hierarchy has {h.n} classes")
    pos = (y != 0).astype(np.float64)
    return ((pos @ h.mask.T.astype(np.float64)) > 0).astype(np.int8)


def is_consistent(y: np.ndarray, h: Hierarchy) -> bool:
    return bool(np.array_equal(close_labels(y, h), (np.asarray(y) != 0).astype(np.int8)))


def check_consistent(y: np.ndarray, h: Hierarchy) -> None:
    if not is_consistent(y, h):
        raise InconsistentLabels("labels are not closed under ancestors")


def parse_funcat_hierarchy(label_tokens: Sequence[str]) -> tuple[Hierarchy, list[list[int]]]:
    """Tree hierarchy from "/"-separated paths; each token may join several paths with "@".

    Every path prefix becomes a class.  Returns the hierarchy and, per token,
    the sorted ancestor-closed list of positive class ids.
    """
    names: list[str] = []
    index: dict[str, int] = {}
    edges: list[tuple[int, int]] = []
    record_paths: list[list[str]] = []

    for token in label_tokens:
        paths = [p for p in token.split(LABEL_SEP)] if token else []
        full_paths = []
        for path in paths:
            segments = path.split(PATH_SEP)
            if any(not s.strip() for s in segments):
                raise MalformedPath(f"empty segment in path {path!r}")
            prev = None
            for k in range(1, len(segments) + 1):
                prefix = PATH_SEP.join(segments[:k])
                if prefix not in index:
                    index[prefix] = len(names)
                    names.append(prefix)
                    if prev is not None:
                        edges.append((index[prev], index[prefix]))
                prev = prefix
            full_paths.append(path)
        record_paths.append(full_paths)

    h = _from_index_edges(tuple(names), index, edges)
    labels = []
    for paths in record_paths:
        ids = {h.index[p] for p in paths}
        labels.append(np.flatnonzero(ancestor_closure(ids, h)).tolist())
    return h, labels


def parse_dag_hierarchy(pairs: Sequence[tuple[str, str]]) -> Hierarchy:
    """DAG hierarchy from (child, parent) pairs; parent ``"root"`` marks a top class."""
    names: list[str] = []
    index: dict[str, int] = {}
    edges: list[tuple[int, int]] = []
    seen = set()

    def add(name):
        if name not in index:
            index[name] = len(names)
            names.append(name)

    for pair in pairs:
        if len(pair) != 2:
            raise MalformedPair(f"expected (child, parent), got {pair!r}")
        child, parent = (str(x).strip() for x in pair)
        if not child or not parent or child == ROOT:
            raise MalformedPair(f"bad pair {pair!r}")
        add(child)
        if parent == ROOT:
            continue
        add(parent)
        e = (index[parent], index[child])
        if e not in seen:
            seen.add(e)
            edges.append(e)
    return _from_index_edges(tuple(names), index, edges)


def read_sidecar(path: str | Path) -> Hierarchy:
    """Read a ``.hierarchy`` file: one ``child parent`` pair per line."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MalformedPair(f"{path}:{lineno}: expected 'child parent', got {line!r}")
            pairs.append((parts[0], parts[1]))
    return parse_dag_hierarchy(pairs)


def write_sidecar(h: Hierarchy, path: str | Path) -> None:
    has_parent = {c for _, c in h.edges}
    with open(path, "w") as fh:
        for i, name in enumerate(h.names):
            if i not in has_parent:
                fh.write(f"{name} {ROOT}\n")
        for p, c in h.edges:
            fh.write(f"{h.names[c]} {h.names[p]}\n")


def export_edges_csv(h: Hierarchy, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parent", "child"])
        for p, c in h.edges:
            w.writerow([h.names[p], h.names[c]])


def read_edges_csv(path: str | Path, names: Sequence[str] | None = None) -> Hierarchy:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = [(r["parent"], r["child"]) for r in rows]
    if names is None:
        names = []
        for p, c in edges:
            for x in (p, c):
                if x not in names:
                    names.append(x)
    return build_hierarchy(names, edges)
