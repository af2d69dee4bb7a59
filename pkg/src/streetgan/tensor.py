"""Dense tensor substrate.

A tensor is a C-ordered ``numpy.ndarray`` of dtype float32.  Image batches
use NCHW order with H=64, W=192 as the canonical street geometry.  All
constructors validate extents and return float32; reductions and matrix
products may accumulate in float64 internally for stability but always
return float32 results.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng

DTYPE = np.float32


def check_shape(shape) -> tuple[int, ...]:
    """Validate a shape: every extent must be a positive integer."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("shape must have at least one extent")
    for s in shape:
        if s < 1:
            raise ValueError(f"all extents must be >= 1, got shape {shape}")
    return shape


def full(shape, value: float = 0.0) -> np.ndarray:
    shape = check_shape(shape)
    return np.full(shape, value, dtype=DTYPE)


def zeros(shape) -> np.ndarray:
    return full(shape, 0.0)


def uniform(shape, low: float, high: float, rng: Rng) -> np.ndarray:
    """Uniform fill in [low, high); consumes exactly prod(shape) draws."""
    shape = check_shape(shape)
    return rng.uniform(low, high, size=shape).astype(DTYPE)


def normal(shape, mean: float, std: float, rng: Rng) -> np.ndarray:
    """Normal fill; consumes exactly prod(shape) draws."""
    shape = check_shape(shape)
    return rng.normal(mean, std, size=shape).astype(DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product [m,k] x [k,n] -> [m,n] with float64 accumulation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def apply(t: np.ndarray, fn) -> np.ndarray:
    """Elementwise map; preserves shape."""
    out = np.asarray(fn(t), dtype=DTYPE)
    if out.shape != t.shape:
        raise ValueError(f"elementwise op changed shape {t.shape} -> {out.shape}")
    return out


def reduce(t: np.ndarray, op: str = "sum", axis: int | None = None,
           keepdims: bool = False) -> np.ndarray:
    """Axis reduction (sum | mean | max). axis=None reduces everything."""
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for rank-{t.ndim} tensor")
    if op == "sum":
        out = np.sum(t, axis=axis, dtype=np.float64, keepdims=keepdims)
    elif op == "mean":
        out = np.mean(t, axis=axis, dtype=np.float64, keepdims=keepdims)
    elif op == "max":
        out = np.max(t, axis=axis, keepdims=keepdims)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return np.asarray(out, dtype=DTYPE)
