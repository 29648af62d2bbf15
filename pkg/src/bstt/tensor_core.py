"""Dense tensors and the small linear-algebra kernels used everywhere else.

Axes and mode lists are 0-based like numpy.  The only 1-based surface is
``DenseTensor.entry``, which takes multi-indices ``(l_1, ..., l_d)`` with
``1 <= l_k <= n_k``.  All index merges use numpy's row-major (C) order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# relative singular-value cutoff for pseudo-inverses
LSTSQ_CUTOFF = 1e-12


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DenseTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 0:
            v = v.reshape(())
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_flat(cls, shape: Sequence[int], flat) -> "DenseTensor":
        shape = tuple(int(n) for n in shape)
        if any(n <= 0 for n in shape):
            raise ShapeError(f"shape entries must be positive, got {shape}")
        flat = np.asarray(flat, dtype=float).ravel()
        if flat.size != int(np.prod(shape)):
            raise ShapeError(f"{flat.size} values do not fill shape {shape}")
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def order(self) -> int:
        return self.values.ndim

    def entry(self, *index: int) -> float:
        """Entry at a 1-based multi-index."""
        if len(index) != self.order:
            raise IndexError(f"expected {self.order} indices, got {len(index)}")
        for l, n in zip(index, self.shape):
            if not 1 <= l <= n:
                raise IndexError(f"index {index} out of range for shape {self.shape}")
        return float(self.values[tuple(l - 1 for l in index)])

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


def as_array(t) -> np.ndarray:
    if isinstance(t, DenseTensor):
        return t.values
    return np.asarray(t, dtype=float)


def reshape(t, new_shape: Sequence[int]) -> DenseTensor:
    a = as_array(t)
    new_shape = tuple(int(n) for n in new_shape)
    if int(np.prod(new_shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {new_shape}")
    return DenseTensor(a.reshape(new_shape))


def contract(a, a_modes: Sequence[int], b, b_modes: Sequence[int]) -> DenseTensor:
    """Sum over paired modes of ``a`` and ``b``.

    Free modes of ``a`` come first in the result, followed by the free modes
    of ``b``, each block in its original order.
    """
    a = as_array(a)
    b = as_array(b)
    a_modes = list(a_modes)
    b_modes = list(b_modes)
    if len(a_modes) != len(b_modes):
        raise ShapeError("mode lists must have equal length")
    for modes, x, name in ((a_modes, a, "a"), (b_modes, b, "b")):
        if len(set(modes)) != len(modes):
            raise ValueError(f"duplicate modes for {name}: {modes}")
        if any(not 0 <= m < x.ndim for m in modes):
            raise ValueError(f"invalid modes {modes} for {name} of order {x.ndim}")
    for ma, mb in zip(a_modes, b_modes):
        if a.shape[ma] != b.shape[mb]:
            raise ShapeError(
                f"mode {ma} of a has size {a.shape[ma]} but mode {mb} of b has size {b.shape[mb]}"
            )
    return DenseTensor(np.tensordot(a, b, axes=(a_modes, b_modes)))


def solve_least_squares(A, y, cutoff: float = LSTSQ_CUTOFF) -> np.ndarray:
    """Minimum-norm minimizer of ``||A v - y||``.

    Singular values below ``cutoff * sigma_max`` are treated as zero.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes {A.shape} and {y.shape}")
    if A.shape[1] == 0:
        return np.zeros(0)
    v, *_ = np.linalg.lstsq(A, y, rcond=cutoff)
    return v


def numerical_rank(m: np.ndarray, rel_cutoff: float = 1e-10) -> int:
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_cutoff * s[0]))
