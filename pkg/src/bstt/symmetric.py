"""Symmetric-tensor parameterization of homogeneous polynomials.

``u(x) = sum_{n in [d]^g} B(n) x_{n_1} ... x_{n_g}`` with ``B`` symmetric.
Only sorted (1-based) multi-indices are stored.  Conversion to the monomial
coefficient tensor ``c`` (mode size ``g+1``) uses
``c(m) = multinomial(g; m_1-1, ..., m_d-1) * B(n)`` where ``m_k - 1`` counts
the occurrences of ``k`` in ``n``.
"""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from math import factorial
from typing import Optional

import numpy as np

from .tensor_core import as_array

NOT_HOMOGENEOUS_TOL = 1e-14


class NotHomogeneousError(ValueError):
    pass


def multinomial(counts) -> int:
    out = factorial(sum(counts))
    for c in counts:
        out //= factorial(c)
    return out


@dataclass
class SymmetricTensor:
    d: int
    g: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for idx, v in self.entries.items():
            idx = tuple(sorted(int(i) for i in idx))
            if len(idx) != self.g or any(not 1 <= i <= self.d for i in idx):
                raise ValueError(f"bad multi-index {idx} for d={self.d}, g={self.g}")
            if idx in clean and clean[idx] != float(v):
                raise ValueError(f"conflicting values for permutations of {idx}")
            clean[idx] = float(v)
        self.entries = clean

    def __getitem__(self, idx) -> float:
        return self.entries.get(tuple(sorted(idx)), 0.0)

    def sorted_indices(self):
        return list(itertools.combinations_with_replacement(range(1, self.d + 1), self.g))

    def full(self) -> np.ndarray:
        """Materialize the full ``d^g`` symmetric array (0-based axes)."""
        out = np.zeros((self.d,) * self.g)
        for idx, v in self.entries.items():
            for perm in set(itertools.permutations(idx)):
                out[tuple(i - 1 for i in perm)] = v
        return out

    def locality(self) -> int:
        """Largest index spread of any nonzero entry (0 for an all-zero tensor)."""
        spreads = [idx[-1] - idx[0] for idx, v in self.entries.items() if v != 0.0 and idx]
        return max(spreads, default=0)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate by contracting the full symmetric array ``g`` times with ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        full = self.full()
        out = np.empty(x.shape[0])
        for j, pt in enumerate(x):
            acc = full
            for _ in range(self.g):
                acc = acc @ pt
            out[j] = acc
        return out

    def to_json(self) -> dict:
        return {"d": self.d, "g": self.g,
                "entries": [[list(idx), v] for idx, v in sorted(self.entries.items())]}

    @classmethod
    def from_json(cls, doc: dict) -> "SymmetricTensor":
        return cls(int(doc["d"]), int(doc["g"]), {tuple(i): v for i, v in doc["entries"]})

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "SymmetricTensor":
        return cls.from_json(json.loads(text))


def _exponents(idx, d: int) -> tuple[int, ...]:
    cnt = Counter(idx)
    return tuple(cnt.get(k, 0) for k in range(1, d + 1))


def symmetric_to_coefficient(b: SymmetricTensor) -> np.ndarray:
    """Monomial coefficient tensor of shape ``(g+1,)*d``."""
    c = np.zeros((b.g + 1,) * b.d)
    for idx, v in b.entries.items():
        e = _exponents(idx, b.d)
        c[e] = multinomial(e) * v
    return c


def coefficient_to_symmetric(c, g: Optional[int] = None) -> SymmetricTensor:
    c = as_array(c)
    d = c.ndim
    if g is None:
        g = c.shape[0] - 1
    deg = np.indices(c.shape).sum(axis=0)
    off = np.abs(c[deg != g]).max(initial=0.0)
    if off > NOT_HOMOGENEOUS_TOL:
        raise NotHomogeneousError(f"entries off total degree {g} reach {off:.3e}")
    entries = {}
    for e in zip(*np.nonzero((deg == g) & (c != 0))):
        idx = tuple(k + 1 for k, n in enumerate(e) for _ in range(n))
        entries[idx] = float(c[e]) / multinomial(e)
    return SymmetricTensor(d, g, entries)


def restrict_locality(b: SymmetricTensor, k_loc: int) -> tuple[SymmetricTensor, float]:
    """Drop entries whose index spread exceeds ``k_loc``.

    Returns the restricted tensor and the Frobenius norm (of the full
    symmetric array) that was removed.
    """
    kept, removed = {}, 0.0
    for idx, v in b.entries.items():
        if idx[-1] - idx[0] > k_loc:
            removed += multinomial(_exponents(idx, b.d)) * v * v
        else:
            kept[idx] = v
    return SymmetricTensor(b.d, b.g, kept), float(np.sqrt(removed))


def random_symmetric(d: int, g: int, seed=None, k_loc: Optional[int] = None) -> SymmetricTensor:
    """Standard-normal entries on all sorted indices (within spread ``k_loc`` if given)."""
    rng = np.random.default_rng(seed)
    entries = {}
    for idx in itertools.combinations_with_replacement(range(1, d + 1), g):
        v = rng.standard_normal()
        if k_loc is None or not idx or idx[-1] - idx[0] <= k_loc:
            entries[idx] = v
    return SymmetricTensor(d, g, entries)


def coefficient_evaluate(c, x) -> np.ndarray:
    """Monomial-dictionary evaluation of a dense coefficient tensor at rows of ``x``."""
    c = as_array(c)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = c.shape[0]
    out = np.empty(x.shape[0])
    powers = np.arange(p)
    for j, pt in enumerate(x):
        acc = c
        for k in range(c.ndim):
            acc = np.tensordot(pt[k] ** powers, acc, axes=([0], [0]))
        out[j] = acc
    return out
