"""Tensor trains: container, dense conversion, orthogonalization, interface tensors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor_core import DenseTensor, ShapeError, as_array, numerical_rank

DENSE_CAP = 10**7
ORTHO_TOL = 1e-10


class CapacityError(RuntimeError):
    pass


class ToleranceError(RuntimeError):
    pass


class OrthogonalityError(ValueError):
    pass


@dataclass
class TensorTrain:
    """Chain of order-3 components ``C_k`` with shapes ``(r_{k-1}, n_k, r_k)``.

    ``ortho`` is one of ``None``, ``"left"``, ``"right"`` or ``"mixed"``;
    ``core`` is the 1-based position carrying the norm when known.
    """

    components: list
    ortho: Optional[str] = None
    core: Optional[int] = None

    def __post_init__(self):
        self.components = [np.asarray(c, dtype=float) for c in self.components]
        if not self.components:
            raise ShapeError("a tensor train needs at least one component")
        for k, c in enumerate(self.components):
            if c.ndim != 3:
                raise ShapeError(f"component {k + 1} has order {c.ndim}, expected 3")
        if self.components[0].shape[0] != 1 or self.components[-1].shape[2] != 1:
            raise ShapeError("boundary ranks must be 1")
        for k in range(self.order - 1):
            if self.components[k].shape[2] != self.components[k + 1].shape[0]:
                raise ShapeError(
                    f"rank mismatch between components {k + 1} and {k + 2}: "
                    f"{self.components[k].shape} vs {self.components[k + 1].shape}"
                )

    @property
    def order(self) -> int:
        return len(self.components)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.components)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Interior ranks ``(r_1, ..., r_{d-1})``."""
        return tuple(c.shape[2] for c in self.components[:-1])

    @property
    def full_ranks(self) -> tuple[int, ...]:
        return (1,) + self.ranks + (1,)

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.components], self.ortho, self.core)

    def num_params(self) -> int:
        return int(sum(c.size for c in self.components))

    def norm(self) -> float:
        return float(np.sqrt(abs(inner(self, self))))

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "ranks": list(self.ranks),
            "components": [c.tolist() for c in self.components],
            "orthogonality": self.ortho,
            "core": self.core,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TensorTrain":
        comps = [np.array(c, dtype=float) for c in doc["components"]]
        t = cls(comps, doc.get("orthogonality"), doc.get("core"))
        if list(t.shape) != list(doc["shape"]) or list(t.ranks) != list(doc["ranks"]):
            raise ShapeError("shape/rank metadata disagrees with the components")
        return t

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "TensorTrain":
        return cls.from_json(json.loads(text))


def inner(a: TensorTrain, b: TensorTrain) -> float:
    env = np.ones((1, 1))
    for ca, cb in zip(a.components, b.components):
        env = np.einsum("ab,aic,bid->cd", env, ca, cb)
    return float(env[0, 0])


def tt_to_dense(t: TensorTrain, cap: int = DENSE_CAP) -> DenseTensor:
    total = int(np.prod(t.shape))
    if total > cap:
        raise CapacityError(f"dense tensor would have {total} entries (cap {cap})")
    acc = t.components[0].reshape(t.shape[0], -1)
    for c in t.components[1:]:
        acc = np.tensordot(acc, c, axes=([acc.ndim - 1], [0]))
    return DenseTensor(acc.reshape(t.shape))


def _unfolding(x: np.ndarray, k: int) -> np.ndarray:
    return x.reshape(int(np.prod(x.shape[:k])), -1)


def tt_rank(x) -> tuple[int, ...]:
    """Ranks of the unfoldings ``(1..k | k+1..d)``, cutoff ``1e-10 * sigma_max``."""
    x = as_array(x)
    return tuple(numerical_rank(_unfolding(x, k)) for k in range(1, x.ndim))


def _truncation_rank(s: np.ndarray, delta: float, max_rank: Optional[int]) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 1
    r = int(np.sum(s > 1e-10 * s[0]))
    # smallest r whose discarded tail stays within delta
    tails = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]  # tails[i] = ||s[i:]||
    for cand in range(1, r + 1):
        if cand == len(s) or tails[cand] <= delta:
            r = cand
            break
    if max_rank is not None:
        r = min(r, max_rank)
    return max(r, 1)


def dense_to_tt(x, max_rank: Optional[int] = None, tol: Optional[float] = None) -> TensorTrain:
    """Sequential-SVD decomposition of a dense tensor.

    The result is left-orthogonal.  Without ``tol`` the decomposition is exact
    (up to the relative singular-value cutoff) unless ``max_rank`` truncates
    it.  With ``tol``, raises ``ToleranceError`` when the rank cap prevents
    reaching ``tol * ||x||``.
    """
    x = as_array(x)
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ValueError("dense_to_tt needs a nonzero tensor")
    d = x.ndim
    shape = x.shape
    delta = (tol or 0.0) * norm / np.sqrt(max(d - 1, 1))
    comps = []
    rem = x.reshape(1, -1)
    r_prev = 1
    for k in range(d - 1):
        rem = rem.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(rem, full_matrices=False)
        r = _truncation_rank(s, delta, max_rank)
        comps.append(u[:, :r].reshape(r_prev, shape[k], r))
        rem = s[:r, None] * vt[:r]
        r_prev = r
    comps.append(rem.reshape(r_prev, shape[-1], 1))
    t = TensorTrain(comps, "left", d)
    err = float(np.linalg.norm(tt_to_dense(t).values - x))
    if tol is not None and err > tol * norm * (1 + 1e-8) + 1e-13 * norm:
        raise ToleranceError(
            f"rank cap {max_rank} reaches relative error {err / norm:.3e} > tol {tol:.3e}"
        )
    return t


def qr_positive(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with a nonnegative diagonal in ``R``."""
    q, r = np.linalg.qr(m, mode="reduced")
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, r * s[:, None]


def left_orth_step(t: TensorTrain, k: int) -> None:
    """Left-orthogonalize component ``k`` (0-based) in place, pushing ``R`` right."""
    c = t.components[k]
    r0, n, r1 = c.shape
    q, r = qr_positive(c.reshape(r0 * n, r1))
    t.components[k] = q.reshape(r0, n, q.shape[1])
    t.components[k + 1] = np.tensordot(r, t.components[k + 1], axes=([1], [0]))


def right_orth_step(t: TensorTrain, k: int) -> None:
    """Right-orthogonalize component ``k`` (0-based) in place, pushing ``R^T`` left."""
    c = t.components[k]
    r0, n, r1 = c.shape
    q, r = qr_positive(c.reshape(r0, n * r1).T)
    t.components[k] = q.T.reshape(q.shape[1], n, r1)
    t.components[k - 1] = np.tensordot(t.components[k - 1], r.T, axes=([2], [0]))


def move_core(t: TensorTrain, pos: int) -> TensorTrain:
    """Mixed-canonical form with the non-orthogonal core at 1-based ``pos``."""
    out = t.copy()
    for k in range(pos - 1):
        left_orth_step(out, k)
    for k in range(out.order - 1, pos - 1, -1):
        right_orth_step(out, k)
    out.ortho = "left" if pos == out.order else "right" if pos == 1 else "mixed"
    out.core = pos
    return out


def orthogonalize(t: TensorTrain, direction: str) -> TensorTrain:
    if direction == "left":
        return move_core(t, t.order)
    if direction == "right":
        return move_core(t, 1)
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


def is_left_orthogonal(c: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    m = c.reshape(-1, c.shape[2])
    return bool(np.allclose(m.T @ m, np.eye(m.shape[1]), atol=tol, rtol=0))


def is_right_orthogonal(c: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    m = c.reshape(c.shape[0], -1)
    return bool(np.allclose(m @ m.T, np.eye(m.shape[0]), atol=tol, rtol=0))


def interface_vectors(t: TensorTrain, k: int, side: str, xis: Optional[Sequence[np.ndarray]] = None,
                      cap: int = DENSE_CAP) -> np.ndarray:
    """Interface tensors at cut ``k`` stacked over the rank slot.

    ``side="left"`` contracts components ``1..k`` and returns an array with
    the slot as last axis; ``side="right"`` contracts ``k+1..d`` with the slot
    as first axis.  With ``xis`` (one ``n_j x M`` matrix per mode) the
    interfaces are evaluated at the samples instead, giving an ``M x r_k``
    matrix for either side.
    """
    d = t.order
    if not 0 <= k <= d:
        raise ValueError(f"cut {k} outside 0..{d}")
    if side == "left":
        part = t.components[:k]
        # at k = d the last component carries the norm and need not be orthogonal
        if not all(is_left_orthogonal(c) for c in part[:min(k, d - 1)]):
            raise OrthogonalityError(f"components 1..{min(k, d - 1)} are not left-orthogonal")
    elif side == "right":
        part = t.components[k:]
        if not all(is_right_orthogonal(c) for c in part[1 if k == 0 else 0:]):
            raise OrthogonalityError(f"components {max(k, 1) + 1}..{d} are not right-orthogonal")
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    if xis is not None:
        m = xis[0].shape[1]
        if side == "left":
            acc = np.ones((m, 1))
            for c, xi in zip(part, xis[:k]):
                acc = np.einsum("ma,im,aib->mb", acc, xi, c)
        else:
            acc = np.ones((m, 1))
            for c, xi in zip(reversed(part), reversed(xis[k:])):
                acc = np.einsum("aib,im,mb->ma", c, xi, acc)
        return acc

    size = int(np.prod([c.shape[1] for c in part], dtype=np.int64)) * max(
        (part[-1].shape[2] if side == "left" else part[0].shape[0]) if part else 1, 1)
    if size > cap:
        raise CapacityError(f"interface tensors would have {size} entries (cap {cap})")
    if not part:
        return np.ones(1)
    if side == "left":
        acc = part[0][0]  # (n_1, r_1)
        for c in part[1:]:
            acc = np.tensordot(acc, c, axes=([acc.ndim - 1], [0]))
        return acc
    acc = part[-1][..., 0]  # (r, n_d)
    for c in reversed(part[:-1]):
        acc = np.tensordot(c, acc, axes=([2], [0]))
    return acc
