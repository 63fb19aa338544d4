"""Dense float32 array type underlying every other module.

Layout is fixed: row-major with axes ordered (batch N, height H, width W,
channels C); lower ranks are right-aligned, so a rank-2 tensor is (N, C).
Tensors are immutable once constructed and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError, ValidationError

MAX_RANK = 4


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable rank-1..4 float32 array in N,H,W,C row-major order.

    Equality is identity; use tensor_allclose for value comparison.
    """

    array: np.ndarray

    def __post_init__(self):
        a = self.array
        if not isinstance(a, np.ndarray):
            raise ValidationError("Tensor wraps a numpy array")
        if a.ndim < 1 or a.ndim > MAX_RANK:
            raise ShapeError(f"rank must be 1..{MAX_RANK}, got {a.ndim}")
        if any(e <= 0 for e in a.shape):
            raise ShapeError(f"extents must be positive, got {a.shape}")
        if a.dtype != np.float32 or not a.flags.c_contiguous:
            a = np.ascontiguousarray(a, dtype=np.float32)
        if not np.isfinite(a).all():
            raise ValidationError("tensor elements must be finite")
        a = a.copy() if a.base is not None else a
        a.setflags(write=False)
        object.__setattr__(self, "array", a)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the underlying buffer (read-only)."""
        return self.array.reshape(-1)

    def tolist(self) -> list:
        return self.array.tolist()


def tensor_create(shape: Sequence[int], fill: float | Sequence[float] | np.ndarray = 0.0) -> Tensor:
    """Create a tensor of `shape` from a scalar fill or a flat row-major buffer.

    A scalar `fill` is repeated; a sequence must have exactly
    prod(shape) elements (ShapeError otherwise).
    """
    shape = tuple(int(e) for e in shape)
    if len(shape) < 1 or len(shape) > MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(shape)}")
    if any(e <= 0 for e in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    n = int(np.prod(shape))
    if np.isscalar(fill) and not isinstance(fill, (str, bytes)):
        arr = np.full(shape, float(fill), dtype=np.float32)
    else:
        buf = np.asarray(fill, dtype=np.float32).reshape(-1)
        if buf.size != n:
            raise ShapeError(f"buffer has {buf.size} elements, shape {shape} needs {n}")
        arr = buf.reshape(shape).copy()
    return Tensor(arr)


def tensor_at(t: Tensor, idx: Sequence[int]) -> float:
    """Element at a full coordinate (row-major); IndexError when out of bounds."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != t.rank:
        raise IndexError(f"index rank {len(idx)} != tensor rank {t.rank}")
    for i, (coord, extent) in enumerate(zip(idx, t.shape)):
        if coord < 0 or coord >= extent:
            raise IndexError(f"coordinate {coord} out of bounds for axis {i} (extent {extent})")
    return float(t.array[idx])


def tensor_allclose(a: Tensor, b: Tensor, rel_tol: float = 1e-5, abs_tol: float = 1e-8) -> bool:
    """True iff shapes match and |a - b| <= abs_tol + rel_tol*|b| elementwise.

    Shape mismatch returns False rather than raising; tolerances must be >= 0.
    """
    if rel_tol < 0 or abs_tol < 0:
        raise ValidationError("tolerances must be non-negative")
    if a.shape != b.shape:
        return False
    av = a.array.astype(np.float64)
    bv = b.array.astype(np.float64)
    return bool(np.all(np.abs(av - bv) <= abs_tol + rel_tol * np.abs(bv)))
