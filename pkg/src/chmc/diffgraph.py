"""A small tape-based reverse-mode differentiation core.

Only the operations the networks in this package need are provided.  Every
op appends a record to the tape; ``Tape.backward`` walks the records in
reverse, so topological order comes for free from recording order.

    tape = Tape()
    x = tape.leaf(xs, requires_grad=False)
    W = tape.leaf(w)
    loss = tape.bce(tape.nonlinearity(tape.affine(x, W, b), "sigmoid"), y)
    tape.backward(loss)
    W.grad
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InvalidRate, NonFiniteValue, ShapeMismatch

EPS = 1e-7
_ROW_CHUNK_ELEMS = 1 << 22


class Node:
    __slots__ = ("value", "grad", "requires_grad", "id")

    def __init__(self, value: np.ndarray, requires_grad: bool = False, id: int = -1):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.id = id

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.value.shape})"


class Tape:
    """Ordered list of op records plus the nodes they produced."""

    def __init__(self):
        self.records: list[tuple[tuple[Node, ...], Node, Callable[[np.ndarray], None]]] = []
        self._next_id = 0

    def _node(self, value, requires_grad):
        node = Node(value, requires_grad, self._next_id)
        self._next_id += 1
        return node

    def leaf(self, value, requires_grad: bool = True) -> Node:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue("non-finite value entering the graph")
        return self._node(value, requires_grad)

    def _record(self, inputs, value, backward) -> Node:
        out = self._node(value, any(i.requires_grad for i in inputs))
        if out.requires_grad:
            self.records.append((tuple(inputs), out, backward))
        return out

    @staticmethod
    def _accumulate(node: Node, g: np.ndarray) -> None:
        if not node.requires_grad:
            return
        if node.grad is None:
            node.grad = np.array(g, dtype=np.float64)
        else:
            node.grad += g

    def backward(self, out: Node) -> None:
        if out.value.size != 1:
            raise ShapeMismatch("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for inputs, node, fn in reversed(self.records):
            if node.grad is not None:
                fn(node.grad)

    # ---- ops -------------------------------------------------------------

    def affine(self, x: Node, W: Node, b: Node) -> Node:
        """y = W x + b, applied to each row when x is a (rows, D) batch."""
        if W.value.ndim != 2 or b.value.shape != (W.value.shape[0],) or x.value.shape[-1] != W.value.shape[1]:
            raise ShapeMismatch(
                f"affine shapes x{x.value.shape} W{W.value.shape} b{b.value.shape} do not conform"
            )
        xv, Wv = x.value, W.value
        value = xv @ Wv.T + b.value

        def backward(g):
            if xv.ndim == 1:
                self._accumulate(W, np.outer(g, xv))
                self._accumulate(b, g)
            else:
                self._accumulate(W, g.T @ xv)
                self._accumulate(b, g.sum(axis=0))
            self._accumulate(x, g @ Wv)

        return self._record((x, W, b), value, backward)

    def nonlinearity(self, x: Node, kind: str) -> Node:
        xv = x.value
        if kind == "tanh":
            value = np.tanh(xv)
            local = 1.0 - value * value
        elif kind == "relu":
            value = np.maximum(xv, 0.0)
            local = (xv > 0).astype(np.float64)
        elif kind == "sigmoid":
            value = expit(xv)
            local = value * (1.0 - value)
        else:
            raise ValueError(f"unknown nonlinearity {kind!r}")

        def backward(g):
            self._accumulate(x, g * local)

        return self._record((x,), value, backward)

    def dropout(self, x: Node, rate: float, training: bool, rng: np.random.Generator | None) -> Node:
        """Inverted dropout: drop with probability ``rate``, scale survivors by 1/(1-rate)."""
        if not 0.0 <= rate < 1.0:
            raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
        if not training or rate == 0.0:
            return x
        keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
        value = x.value * keep

        def backward(g):
            self._accumulate(x, g * keep)

        return self._record((x,), value, backward)

    def mul(self, a: Node, b) -> Node:
        """Elementwise product; ``b`` may be a Node or a constant array."""
        bv = b.value if isinstance(b, Node) else np.asarray(b, dtype=np.float64)
        if a.value.shape != bv.shape:
            raise ShapeMismatch(f"mul shapes {a.value.shape} and {bv.shape} differ")
        av = a.value
        value = av * bv

        def backward(g):
            self._accumulate(a, g * bv)
            if isinstance(b, Node):
                self._accumulate(b, g * av)

        return self._record((a, b) if isinstance(b, Node) else (a,), value, backward)

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ShapeMismatch(f"add shapes {a.value.shape} and {b.value.shape} differ")

        def backward(g):
            self._accumulate(a, g)
            self._accumulate(b, g)

        return self._record((a, b), a.value + b.value, backward)

    def sum(self, a: Node) -> Node:
        shape = a.value.shape

        def backward(g):
            self._accumulate(a, np.broadcast_to(g, shape))

        return self._record((a,), np.array(a.value.sum()), backward)

    def masked_row_max(self, h: Node, mask: np.ndarray) -> Node:
        """out[..., i] = max of h[..., j] over j with mask[i, j]; adjoint goes to the argmax.

        ``mask`` may be a boolean (n, n) array or a prebuilt ``RowMaxIndex``.
        """
        hv = h.value
        n = hv.shape[-1]
        value, arg = row_max(hv, mask)

        def backward(g):
            if hv.ndim == 1:
                gin = np.bincount(arg, weights=g, minlength=n)
            else:
                rows = np.repeat(np.arange(hv.shape[0]), n)
                flat = rows * n + arg.ravel()
                gin = np.bincount(flat, weights=g.ravel(), minlength=hv.size).reshape(hv.shape)
            self._accumulate(h, gin)

        return self._record((h,), value, backward)

    def bce(self, pred: Node, target, reduction: str = "sum", eps: float = EPS) -> Node:
        """Binary cross-entropy with predictions clamped into [eps, 1 - eps].

        ``reduction="sum"`` sums over every element, ``"mean"`` averages.
        The adjoint is evaluated at the clamped prediction.
        """
        if reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {reduction!r}")
        y = np.asarray(target, dtype=np.float64)
        if y.shape != pred.value.shape:
            raise ShapeMismatch(f"bce shapes {pred.value.shape} and {y.shape} differ")
        p = np.clip(pred.value, eps, 1.0 - eps)
        terms = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
        scale = 1.0 if reduction == "sum" else 1.0 / max(terms.size, 1)

        def backward(g):
            self._accumulate(pred, g * scale * (-(y / p) + (1.0 - y) / (1.0 - p)))

        return self._record((pred,), np.array(terms.sum() * scale), backward)


def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


class RowMaxIndex:
    """Per-row support of a boolean mask, padded to a common width.

    Row ``i`` lists the columns ``j`` with ``mask[i, j]`` in ascending order;
    short rows repeat their first entry, which leaves maxima and the
    first-occurrence argmax unchanged.
    """

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
            raise ShapeMismatch(f"mask must be square, got {mask.shape}")
        self.n = mask.shape[0]
        counts = mask.sum(axis=1)
        self.empty = counts == 0
        width = int(max(counts.max(initial=0), 1))
        idx = np.zeros((self.n, width), dtype=np.int64)
        for i, row in enumerate(mask):
            cols = np.flatnonzero(row)
            if cols.size:
                idx[i, : cols.size] = cols
                idx[i, cols.size:] = cols[0]
        self.idx = idx
        self.width = width


def row_max(hv: np.ndarray, mask) -> tuple[np.ndarray, np.ndarray]:
    """Masked row max of scores and the selected index (smallest index on ties).

    ``mask`` is a boolean (n, n) array or a prebuilt ``RowMaxIndex``.  Works on
    a (n,) vector or a (rows, n) batch, chunking rows to bound memory.  Rows of
    the mask with no support yield -inf.
    """
    index = mask if isinstance(mask, RowMaxIndex) else RowMaxIndex(mask)
    hv = np.asarray(hv, dtype=np.float64)
    n = hv.shape[-1]
    if index.n != n:
        raise ShapeMismatch(f"mask for {index.n} classes applied to {n} scores")
    if hv.ndim == 1:
        v, a = row_max(hv[None, :], index)
        return v[0], a[0]
    rows = hv.shape[0]
    value = np.empty((rows, n))
    arg = np.empty((rows, n), dtype=np.int64)
    step = max(1, _ROW_CHUNK_ELEMS // max(n * index.width, 1))
    cols = np.arange(n)[None, :]
    for s in range(0, rows, step):
        block = hv[s:s + step][:, index.idx]  # (chunk, n, width)
        a = block.argmax(axis=2)
        arg[s:s + step] = index.idx[cols, a]
        value[s:s + step] = block.max(axis=2)
    if index.empty.any():
        value[:, index.empty] = -np.inf
    return value, arg
