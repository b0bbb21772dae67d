"""Minimal dense float32 kernel: matmul, row softmax, row layernorm, gather/scatter.

All operations are pure (inputs are never mutated), operate on 2D float32
arrays, and are deterministic: repeated evaluation on the same inputs is
bit-identical. Where accumulation order matters for float reproducibility
(scatter_add_rows with duplicate indices), rows are applied in ascending
position order of the index list.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class TokenIndexError(IndexError):
    """A row index is outside the valid range."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


@dataclass
class FlopCounter:
    """Accumulates multiply-add FLOPs (2 per MAC) for matmul calls."""

    matmul: int = 0


_local = threading.local()


def _active_counters() -> list[FlopCounter]:
    counters = getattr(_local, "counters", None)
    if counters is None:
        counters = []
        _local.counters = counters
    return counters


@contextmanager
def count_matmul_flops(counter: FlopCounter):
    """Record matmul FLOPs issued by this thread into `counter`."""
    stack = _active_counters()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2D float32 ndarray, rejecting anything else."""
    out = np.asarray(a, dtype=DTYPE)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2D, got ndim={out.ndim}")
    return out


def _check_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with a shape check and finite output."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    for counter in _active_counters():
        counter.matmul += 2 * a.shape[0] * a.shape[1] * b.shape[1]
    return _check_finite(out, "matmul")


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax with max subtraction; each row sums to 1."""
    a = as_matrix(a)
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted, dtype=DTYPE)
    out = e / e.sum(axis=1, keepdims=True, dtype=DTYPE)
    return _check_finite(out, "softmax_rows")


def layernorm_rows(a, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to mean 0, variance 1 (no affine), eps in the denominator.

    Moments are taken in double precision so constant rows come out exactly
    zero and the centering is free of float32 cancellation noise; the result
    is cast back to float32.
    """
    a = as_matrix(a)
    if a.shape[1] < 2:
        raise ShapeError(f"layernorm_rows needs >= 2 columns, got {a.shape[1]}")
    wide = a.astype(np.float64)
    centered = wide - wide.mean(axis=1, keepdims=True)
    var = np.mean(centered * centered, axis=1, keepdims=True)
    out = (centered / np.sqrt(var + eps)).astype(DTYPE)
    return _check_finite(out, "layernorm_rows")


def _check_indices(idx, rows: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"index list must be 1D, got ndim={idx.ndim}")
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise TokenIndexError(f"row index out of range [0, {rows})")
    return idx


def gather_rows(a, idx) -> np.ndarray:
    """Select rows of `a` in the order given by `idx`."""
    a = as_matrix(a)
    idx = _check_indices(idx, a.shape[0])
    return a[idx].copy()


def scatter_add_rows(a, idx, src) -> np.ndarray:
    """Accumulate rows of `src` into `a` at `idx`, without mutating `a`.

    Duplicate indices accumulate; additions are applied in ascending
    position order of `idx` so the result is bit-deterministic.
    """
    a = as_matrix(a, "a")
    src = as_matrix(src, "src")
    idx = _check_indices(idx, a.shape[0])
    if idx.shape[0] != src.shape[0]:
        raise ShapeError(f"idx has {idx.shape[0]} entries but src has {src.shape[0]} rows")
    if src.shape[1] != a.shape[1]:
        raise ShapeError(f"column mismatch: a has {a.shape[1]}, src has {src.shape[1]}")
    out = a.copy()
    np.add.at(out, idx, src)
    return out
