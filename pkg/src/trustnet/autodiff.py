"""Minimal reverse-mode automatic differentiation over numpy arrays.

Implements exactly the operations the trust pipeline needs: dense and
sparse matrix products, row gather/scatter/slicing, segment reductions
over edge lists, and the usual elementwise activations. Everything is
float64 and gradients are exact analytic expressions.

A forward pass runs inside a ``Tape`` context; each differentiable
operation appends one record. ``Tape.gradients`` replays the records in
reverse execution order (which is a reverse topological order, since
records are appended eagerly) and may be called exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "EdgeMap",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sigmoid",
    "leaky_relu",
    "elu",
    "reduce_sum",
    "mean",
    "slice_rows",
    "concat_rows",
    "concat_cols",
    "gather",
    "gather_pairs",
    "segment_sum",
    "segment_max_values",
    "sparse_matmul",
    "edge_matmul",
    "as_tensor",
]


class TapeError(RuntimeError):
    """A tape was replayed twice, or backward ran with no marked output."""


_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A float64 array tracked by the active tape.

    Tensors hash by identity; gradient dictionaries are keyed by the
    tensor object itself. ``requires_grad=False`` marks constants that
    never receive gradient contributions.
    """

    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = True, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


class Tape:
    """Wengert list of one forward pass; replayable backward exactly once."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self._output: Tensor | None = None
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False

    def mark_output(self, t: Tensor) -> None:
        if t.value.shape != ():
            raise ValueError("tape output must be a scalar tensor")
        self._output = t

    @property
    def num_records(self) -> int:
        return len(self._records)

    def gradients(self) -> dict[Tensor, np.ndarray]:
        """Run the backward pass; returns gradients keyed by tensor.

        Each record is visited once, in reverse execution order. Calling
        this a second time raises ``TapeError``.
        """
        if self._spent:
            raise TapeError("tape has already been replayed")
        if self._output is None:
            raise TapeError("no output marked on this tape")
        self._spent = True
        grads: dict[Tensor, np.ndarray] = {self._output: np.ones_like(self._output.value)}
        for out, backward in reversed(self._records):
            g = grads.pop(out, None)
            if g is None:
                continue
            for t, contrib in backward(g):
                if contrib is None or not t.requires_grad:
                    continue
                prev = grads.get(t)
                grads[t] = contrib if prev is None else prev + contrib
        return grads


def _record(out: Tensor, backward) -> None:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._records.append((out, backward))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        return [
            (a, _unbroadcast(g, a.value.shape) if a.requires_grad else None),
            (b, _unbroadcast(g, b.value.shape) if b.requires_grad else None),
        ]

    _record(out, backward)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        return [
            (a, _unbroadcast(g, a.value.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g, b.value.shape) if b.requires_grad else None),
        ]

    _record(out, backward)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.value, requires_grad=a.requires_grad)
    _record(out, lambda g: [(a, -g)])
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        return [
            (a, _unbroadcast(g * b.value, a.value.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.value, b.value.shape) if b.requires_grad else None),
        ]

    _record(out, backward)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value / b.value, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        da = _unbroadcast(g / b.value, a.value.shape) if a.requires_grad else None
        db = (
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)
            if b.requires_grad
            else None
        )
        return [(a, da), (b, db)]

    _record(out, backward)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; supports (n,k)@(k,m) and (n,k)@(k,)."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value @ b.value, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        if b.value.ndim == 1:
            da = np.outer(g, b.value) if a.requires_grad else None
            db = a.value.T @ g if b.requires_grad else None
        else:
            da = g @ b.value.T if a.requires_grad else None
            db = a.value.T @ g if b.requires_grad else None
        return [(a, da), (b, db)]

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.value), requires_grad=a.requires_grad)
    val = out.value
    _record(out, lambda g: [(a, g * val)])
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.value), requires_grad=a.requires_grad)
    _record(out, lambda g: [(a, g / a.value)])
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # exp on the negative half-line only, for stability on both tails
    x = a.value
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s, requires_grad=a.requires_grad)
    _record(out, lambda g: [(a, g * s * (1.0 - s))])
    return out


def leaky_relu(a, negative_slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    x = a.value
    slope_mask = np.where(x >= 0, 1.0, negative_slope)
    out = Tensor(x * slope_mask, requires_grad=a.requires_grad)
    _record(out, lambda g: [(a, g * slope_mask)])
    return out


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.value
    ex = np.exp(np.minimum(x, 0.0))
    out = Tensor(np.where(x >= 0, x, alpha * (ex - 1.0)), requires_grad=a.requires_grad)
    deriv = np.where(x >= 0, 1.0, alpha * ex)
    _record(out, lambda g: [(a, g * deriv)])
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.sum(axis=axis), requires_grad=a.requires_grad)

    def backward(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.value.shape).copy())]
        return [(a, np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy())]

    _record(out, backward)
    return out


def mean(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.mean(), requires_grad=a.requires_grad)
    size = a.value.size
    _record(out, lambda g: [(a, np.full(a.value.shape, float(g) / size))])
    return out


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Contiguous row slice a[start:stop] (works on 1-D and 2-D tensors)."""
    a = as_tensor(a)
    out = Tensor(a.value[start:stop], requires_grad=a.requires_grad)

    def backward(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return [(a, full)]

    _record(out, backward)
    return out


def concat_rows(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(
        np.concatenate([a.value, b.value], axis=0),
        requires_grad=a.requires_grad or b.requires_grad,
    )
    na = a.value.shape[0]

    def backward(g):
        return [
            (a, g[:na] if a.requires_grad else None),
            (b, g[na:] if b.requires_grad else None),
        ]

    _record(out, backward)
    return out


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(
        np.concatenate([a.value, b.value], axis=1),
        requires_grad=a.requires_grad or b.requires_grad,
    )
    ka = a.value.shape[1]

    def backward(g):
        return [
            (a, g[:, :ka] if a.requires_grad else None),
            (b, g[:, ka:] if b.requires_grad else None),
        ]

    _record(out, backward)
    return out


def gather(a, idx: np.ndarray) -> Tensor:
    """Row gather a[idx]; scatter-add on the way back."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.value[idx], requires_grad=a.requires_grad)

    def backward(g):
        if a.value.ndim == 1:
            da = np.bincount(idx, weights=g, minlength=a.value.shape[0])
        else:
            da = np.zeros_like(a.value)
            np.add.at(da, idx, g)
        return [(a, da)]

    _record(out, backward)
    return out


def gather_pairs(a, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Elementwise gather a[rows, cols] from a 2-D tensor."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = Tensor(a.value[rows, cols], requires_grad=a.requires_grad)

    def backward(g):
        da = np.zeros_like(a.value)
        np.add.at(da, (rows, cols), g)
        return [(a, da)]

    _record(out, backward)
    return out


def segment_sum(a, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum 1-D values into ``num_segments`` buckets given per-element ids."""
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    out = Tensor(
        np.bincount(segments, weights=a.value, minlength=num_segments),
        requires_grad=a.requires_grad,
    )
    _record(out, lambda g: [(a, g[segments])])
    return out


def segment_max_values(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Per-segment max of contiguous segments (plain ndarray helper, no grad).

    Segments must be non-empty; used as a detached shift inside softmax.
    """
    return np.maximum.reduceat(values, indptr[:-1])


# ---------------------------------------------------------------------------
# sparse structure


def sparse_matmul(mat: sp.csr_matrix, mat_t: sp.csr_matrix, x) -> Tensor:
    """Product ``mat @ x`` with a constant sparse matrix.

    ``mat_t`` must be the CSR transpose of ``mat``; it drives the backward
    pass without a conversion per call.
    """
    x = as_tensor(x)
    out = Tensor(mat @ x.value, requires_grad=x.requires_grad)
    _record(out, lambda g: [(x, mat_t @ g)])
    return out


@dataclass(frozen=True)
class EdgeMap:
    """Fixed sparsity pattern of an edge list, sorted row-major.

    Precomputes CSR structure for the pattern and its transpose so a
    weighted adjacency product only has to drop edge values into place.
    ``order`` is the permutation that sorted the constructor input; apply
    it to any parallel per-edge arrays.
    """

    rows: np.ndarray
    cols: np.ndarray
    n_rows: int
    n_cols: int
    order: np.ndarray
    indptr: np.ndarray
    t_perm: np.ndarray
    t_indptr: np.ndarray
    t_indices: np.ndarray

    @classmethod
    def from_edges(cls, rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int) -> "EdgeMap":
        rows = np.asarray(rows, dtype=np.int32)
        cols = np.asarray(cols, dtype=np.int32)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(rows, minlength=n_rows)))
        ).astype(np.int32)
        t_perm = np.lexsort((rows, cols))
        t_indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(cols, minlength=n_cols)))
        ).astype(np.int32)
        return cls(
            rows, cols, n_rows, n_cols, order, indptr, t_perm, t_indptr, rows[t_perm]
        )

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.cols, self.indptr), shape=(self.n_rows, self.n_cols))

    def matrix_t(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (values[self.t_perm], self.t_indices, self.t_indptr),
            shape=(self.n_cols, self.n_rows),
        )


def edge_matmul(values, x, emap: EdgeMap) -> Tensor:
    """Weighted-adjacency product: out[i] = sum_e values[e] * x[cols[e]].

    ``values`` is a per-edge tensor aligned with ``emap`` (row-major
    order); gradients flow into both the edge values and ``x``.
    """
    values, x = as_tensor(values), as_tensor(x)
    out = Tensor(
        emap.matrix(values.value) @ x.value,
        requires_grad=values.requires_grad or x.requires_grad,
    )

    def backward(g):
        dvals = None
        if values.requires_grad:
            dvals = np.einsum("ed,ed->e", g[emap.rows], x.value[emap.cols])
        dx = emap.matrix_t(values.value) @ g if x.requires_grad else None
        return [(values, dvals), (x, dx)]

    _record(out, backward)
    return out
