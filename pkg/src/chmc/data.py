"""Datasets and the synthetic rectangle worlds."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidRectangle, InvalidStep, ShapeMismatch
from .hierarchy import (
    Hierarchy,
    build_hierarchy,
    check_consistent,
    close_labels,
    export_edges_csv,
)


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray  # int8 0/1, ancestor-closed
    hierarchy: Hierarchy
    split: str = "train"
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.int8)
        if self.X.ndim != 2 or self.Y.ndim != 2 or len(self.X) != len(self.Y):
            raise ShapeMismatch(f"features {self.X.shape} and labels {self.Y.shape} do not align")
        if self.Y.shape[1] != self.hierarchy.n:
            raise ShapeMismatch(f"labels have {self.Y.shape[1]} classes, hierarchy has {self.hierarchy.n}")

    def __len__(self):
        return len(self.X)

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, split=None) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.hierarchy, split or self.split, list(self.feature_names))

    def check(self) -> None:
        check_consistent(self.Y, self.hierarchy)
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain NaN or infinite values")

    def dump(self, directory: str | Path, prefix: str | None = None) -> None:
        """Write features, binary labels and hierarchy edges as CSV files."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.split
        names = self.feature_names or [f"x{i}" for i in range(self.D)]
        with open(d / f"{prefix}_features.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows([[repr(float(v)) for v in row] for row in self.X])
        with open(d / f"{prefix}_labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.hierarchy.names)
            w.writerows(self.Y.tolist())
        export_edges_csv(self.hierarchy, d / "hierarchy.csv")


def concat(a: Dataset, b: Dataset, split: str = "trainval") -> Dataset:
    if a.hierarchy != b.hierarchy or a.D != b.D:
        raise ShapeMismatch("datasets do not share features and hierarchy")
    return Dataset(np.vstack([a.X, b.X]), np.vstack([a.Y, b.Y]), a.hierarchy, split, list(a.feature_names))


def split_dataset(ds: Dataset, test_fraction: float = 0.5, val_fraction: float = 0.0):
    """Split iid samples in order: train, then validation, then test."""
    n = len(ds)
    n_test = int(round(n * test_fraction))
    n_val = int(round(n * val_fraction))
    n_train = n - n_test - n_val
    train = ds.subset(slice(0, n_train), "train")
    val = ds.subset(slice(n_train, n_train + n_val), "val") if n_val else None
    test = ds.subset(slice(n_train + n_val, n), "test")
    return train, val, test


@dataclass(frozen=True)
class Rectangle:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(0.0 <= c <= 1.0 for c in coords) or not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidRectangle(f"invalid rectangle {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def overlap(self, other: "Rectangle") -> float:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        return max(w, 0.0) * max(h, 0.0)


def two_class_hierarchy() -> Hierarchy:
    """Classes (A, B) with A a subclass of B."""
    return build_hierarchy(["A", "B"], [("B", "A")])


def gen_two_rectangles(r1: Rectangle, r2: Rectangle, n_points: int, rng) -> Dataset:
    """Uniform points on the unit square; A = R1, B = R1 union R2."""
    if not isinstance(r1, Rectangle) or not isinstance(r2, Rectangle):
        raise InvalidRectangle("r1 and r2 must be Rectangle instances")
    rng = np.random.default_rng(rng)
    X = rng.uniform(0.0, 1.0, size=(n_points, 2))
    in1, in2 = r1.contains(X), r2.contains(X)
    Y = np.stack([in1, in1 | in2], axis=1).astype(np.int8)
    return Dataset(X, Y, two_class_hierarchy(), "all", ["x", "y"])


# Moving-rectangles geometry.  R2 is fixed in the upper-right part of the
# square; R1 (0.6 of R2's side) starts in the lower-left corner and its centre
# moves along the diagonal to R2's centre.  Steps 1-3 are disjoint, steps 4-7
# partially overlap and from step 8 on R1 lies inside R2.
MOVING = {
    "r2": (0.48, 0.48, 0.98, 0.98),
    "r1_size": (0.30, 0.30),
    "r1_center_start": (0.17, 0.17),
    "r1_center_end": (0.73, 0.73),
    "steps": 9,
}


def moving_rectangles(step: int) -> tuple[Rectangle, Rectangle]:
    if not (isinstance(step, (int, np.integer)) and 1 <= step <= MOVING["steps"]):
        raise InvalidStep(f"step must be an integer in [1, {MOVING['steps']}], got {step!r}")
    t = (step - 1) / (MOVING["steps"] - 1)
    (sx, sy), (ex, ey) = MOVING["r1_center_start"], MOVING["r1_center_end"]
    cx, cy = sx + t * (ex - sx), sy + t * (ey - sy)
    w, h = MOVING["r1_size"]
    r1 = Rectangle(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    return r1, Rectangle(*MOVING["r2"])


def gen_moving_rectangles(step: int, n_points: int, rng) -> Dataset:
    r1, r2 = moving_rectangles(step)
    return gen_two_rectangles(r1, r2, n_points, rng)


# Nine rectangles on a 10x10 drawing grid scaled to the unit square.
# Class A5 is an ancestor of every class and A3 a descendant of every class.
NINE_RECTANGLES = {
    1: (0.10, 0.60, 0.40, 0.90),
    2: (0.45, 0.60, 0.55, 0.90),
    3: (0.60, 0.60, 0.90, 0.90),
    4: (0.10, 0.45, 0.40, 0.55),
    5: (0.45, 0.45, 0.55, 0.55),
    6: (0.60, 0.45, 0.90, 0.55),
    7: (0.10, 0.10, 0.40, 0.40),
    8: (0.45, 0.10, 0.55, 0.40),
    9: (0.60, 0.10, 0.90, 0.40),
}


def nine_rectangle_hierarchy() -> Hierarchy:
    names = [f"A{i}" for i in range(1, 10)]
    edges = [("A5", "A3")]
    for i in (1, 2, 4, 6, 7, 8, 9):
        edges.append(("A5", f"A{i}"))
        edges.append((f"A{i}", "A3"))
    return build_hierarchy(names, edges)


def gen_nine_rectangles(n_points: int, rng) -> Dataset:
    rng = np.random.default_rng(rng)
    X = rng.uniform(0.0, 1.0, size=(n_points, 2))
    member = np.stack([Rectangle(*NINE_RECTANGLES[i]).contains(X) for i in range(1, 10)], axis=1)
    h = nine_rectangle_hierarchy()
    return Dataset(X, close_labels(member, h), h, "all", ["x", "y"])
