"""Block-sparse tensor trains for eigenspaces of the degree operator.

A coefficient tensor ``c`` of a homogeneous polynomial of degree ``g``
satisfies ``L c = g c`` where ``L`` adds up the per-mode degrees.  Such a
tensor has a TT representation in which every rank slot at interface ``k``
carries a degree ``gt``: the left interface polynomial in ``x_1..x_k`` is
homogeneous of degree ``gt`` and the right one has degree ``g - gt``.  The
slots of one degree form a group; group sizes are ``rho[k, gt]``.  A core
entry ``C_k[l1, m, l2]`` may only be nonzero when
``deg(l1) + (m - 1) == deg(l2)``.

Slots inside an interface are laid out in ascending degree, so each core
slice is a block matrix with contiguous blocks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from . import poly_spaces as ps
from .tensor_core import as_array
from .tt import TensorTrain, qr_positive, tt_to_dense

# published reference DOF values for the benchmark spaces
REFERENCE_DOF = {
    "W(d=8,g=2)": 36,
    "B(rho=4;W(d=8,g=2))": 94,
    "T(r=6;V(d=8,p=3))": 390,
    "V(d=8,p=3)": 6561,
    "S(d=6,g=7)": 1716,
    "S(d=6,g=7,rho=1)": 552,
    "T(r=1;V(d=6,p=8))": 48,
    "T(r=8;V(d=6,p=8))": 2176,
    "V(d=6,p=8)": 262144,
    "S(d=10,g=5)": 3003,
    "S(d=10,g=5,rho=3)": 1726,
    "S(d=10,g=5,rho=3,aug)": 803,
    "T(r=14;V(d=10,p=6))": 7896,
    "V(d=10,p=6)": 60466176,
}
# reference entries whose counting convention differs from dof_count
CONVENTION_MISMATCH = {"T(r=6;V(d=8,p=3))", "T(r=14;V(d=10,p=6))", "S(d=10,g=5,rho=3,aug)"}


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class BlockStructure:
    """Group sizes ``rho[k, gt]`` for interfaces ``k = 0..d`` and degrees ``gt = 0..g``."""

    d: int
    g: int
    p: int
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=int)
        if rho.shape != (self.d + 1, self.g + 1):
            raise ValueError(f"rho table must have shape {(self.d + 1, self.g + 1)}, got {rho.shape}")
        if (rho < 0).any():
            raise ValueError("group sizes must be nonnegative")
        if self.p < 1:
            raise ValueError("mode dimension must be positive")
        bound0 = np.zeros(self.g + 1, dtype=int)
        bound0[0] = 1
        boundd = np.zeros(self.g + 1, dtype=int)
        boundd[self.g] = 1
        if not (np.array_equal(rho[0], bound0) and np.array_equal(rho[self.d], boundd)):
            raise ValueError("boundary groups must be S_{0,0} = S_{d,g} = {1}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def full_ranks(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.rho.sum(axis=1))

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.full_ranks[1:-1]

    def slot_degrees(self, k: int) -> np.ndarray:
        """Degree of every rank slot at interface ``k`` (ascending layout)."""
        return np.repeat(np.arange(self.g + 1), self.rho[k])

    def group_slices(self, k: int) -> list[slice]:
        off = np.concatenate([[0], np.cumsum(self.rho[k])])
        return [slice(int(off[h]), int(off[h + 1])) for h in range(self.g + 1)]

    def mask(self, k: int) -> np.ndarray:
        """Boolean allowed-entry mask of core ``k`` (1-based), shape ``(r_{k-1}, p, r_k)``."""
        left = self.slot_degrees(k - 1)
        right = self.slot_degrees(k)
        m = np.arange(self.p)
        return (left[:, None, None] + m[None, :, None]) == right[None, None, :]

    def core_shapes(self) -> list[tuple[int, int, int]]:
        r = self.full_ranks
        return [(r[k], self.p, r[k + 1]) for k in range(self.d)]

    def dof(self) -> int:
        return int(sum(self.mask(k).sum() for k in range(1, self.d + 1)))

    def to_json(self) -> dict:
        return {"d": self.d, "g": self.g, "p": self.p, "rho": self.rho.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "BlockStructure":
        return cls(int(doc["d"]), int(doc["g"]), int(doc["p"]), np.array(doc["rho"], dtype=int))

    def __eq__(self, other):
        return (isinstance(other, BlockStructure) and (self.d, self.g, self.p) == (other.d, other.g, other.p)
                and np.array_equal(self.rho, other.rho))

    def __hash__(self):
        return hash((self.d, self.g, self.p, self.rho.tobytes()))


def degree_operator_apply(c, grading=None) -> np.ndarray:
    """Apply ``L = sum_k I x .. x diag(grading) x .. x I`` to a dense tensor."""
    c = as_array(c)
    if c.ndim == 0:
        return c.copy()
    n = c.shape[0]
    if any(s != n for s in c.shape):
        raise ValueError(f"degree operator needs equal mode sizes, got {c.shape}")
    grading = np.arange(n) if grading is None else np.asarray(grading, dtype=float)
    if grading.shape != (n,):
        raise ValueError(f"grading length {grading.shape} does not match mode size {n}")
    total = np.zeros(c.shape)
    for k in range(c.ndim):
        shape = [1] * c.ndim
        shape[k] = n
        total = total + grading.reshape(shape)
    return total * c


def rank_bound(d: int, g: int, k: int, gt: int) -> int:
    """Group-size bound at interface ``k`` for degree ``gt``; 1 for ``gt`` in ``{0, g}``."""
    if k == 0:
        return int(gt == 0)
    if k == d:
        return int(gt == g)
    if gt in (0, g):
        return 1
    return min(comb(k + gt - 1, k - 1), comb(d - k + g - gt - 1, d - k - 1))


def local_rank_bound(g: int, gt: int, k_loc: int, augmented: bool = False) -> int:
    """Locality group-size bound; independent of ``d`` and of the interface."""
    if gt in (0, g):
        return 1
    if not 0 < gt < g:
        raise ValueError(f"degree {gt} outside 0..{g}")
    extra = 1 if augmented else 0
    total = extra
    for l in range(1, k_loc + 1):
        total += min(comb(k_loc - l + 1 + gt - 2, k_loc - l),
                     comb(l + extra + g - gt - 2, l + extra - 1))
    return total


def _make_feasible(rho: np.ndarray, p: int) -> np.ndarray:
    """Shrink groups that cannot be filled from their neighbours.

    A slot of degree ``h`` at interface ``k`` is fed by slots of degree
    ``h-p+1..h`` at ``k-1`` and feeds slots of degree ``h..h+p-1`` at ``k+1``.
    """
    rho = rho.copy()
    d, g1 = rho.shape[0] - 1, rho.shape[1]
    changed = True
    while changed:
        changed = False
        for k in range(1, d):
            for h in range(g1):
                left = rho[k - 1, max(0, h - p + 1):h + 1].sum()
                right = rho[k + 1, h:min(g1, h + p)].sum()
                v = min(rho[k, h], left, right)
                if v != rho[k, h]:
                    rho[k, h] = v
                    changed = True
    return rho


def build_block_structure(d: int, g: int, rho_max: int, k_loc: Optional[int] = None,
                          p: Optional[int] = None) -> BlockStructure:
    """Group sizes ``min(bound, rho_max)`` with the boundary groups fixed to 1.

    With ``k_loc`` the locality bound is applied as well.  Groups that their
    neighbours cannot feed are shrunk so every size is attainable.
    """
    p = g + 1 if p is None else p
    if d < 1 or g < 0 or rho_max < 1:
        raise ValueError("need d >= 1, g >= 0, rho_max >= 1")
    if g > (p - 1) * d:
        raise ValueError(f"degree {g} unreachable with mode size {p} in {d} variables")
    rho = np.zeros((d + 1, g + 1), dtype=int)
    for k in range(d + 1):
        for gt in range(g + 1):
            b = rank_bound(d, g, k, gt)
            if 0 < k < d and 0 < gt < g:
                b = min(b, rho_max)
                if k_loc is not None:
                    b = min(b, local_rank_bound(g, gt, k_loc))
            rho[k, gt] = b
    return BlockStructure(d, g, p, _make_feasible(rho, p))


def sparsity_pattern(bs: BlockStructure, k: int) -> set[tuple[int, int, int]]:
    """Allowed 1-based ``(l1, m, l2)`` triples of core ``k``."""
    if not 1 <= k <= bs.d:
        raise ValueError(f"core index {k} outside 1..{bs.d}")
    return {(int(a) + 1, int(i) + 1, int(b) + 1) for a, i, b in zip(*np.nonzero(bs.mask(k)))}


def build_augmented(d: int, g: int, rho_max: int) -> BlockStructure:
    """Structure of the order-``d+1`` train whose last mode is the shadow degree.

    Contracting the shadow mode with ones sums the degree-``gt`` parts; the
    degree-``gt`` part sits at shadow index ``m`` with ``m - 1 = g - gt``.
    """
    return build_block_structure(d + 1, g, rho_max, p=g + 1)


def _pattern_violation(bs: BlockStructure, comps) -> float:
    return float(sum(np.abs(c[~bs.mask(k + 1)]).sum() for k, c in enumerate(comps)))


@dataclass
class BlockSparseTT:
    tt: TensorTrain
    structure: BlockStructure

    def __post_init__(self):
        bs = self.structure
        if self.tt.order != bs.d:
            raise PatternError(f"train order {self.tt.order} != structure order {bs.d}")
        shapes = [c.shape for c in self.tt.components]
        if shapes != bs.core_shapes():
            raise PatternError(f"component shapes {shapes} do not match structure {bs.core_shapes()}")
        if _pattern_violation(bs, self.tt.components) != 0.0:
            raise PatternError("components have nonzero entries outside the block pattern")

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def g(self) -> int:
        return self.structure.g

    def copy(self) -> "BlockSparseTT":
        return BlockSparseTT(self.tt.copy(), self.structure)

    def dense(self) -> np.ndarray:
        return tt_to_dense(self.tt).values

    def to_json(self) -> dict:
        return {"tt": self.tt.to_json(), "structure": self.structure.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "BlockSparseTT":
        return cls(TensorTrain.from_json(doc["tt"]), BlockStructure.from_json(doc["structure"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "BlockSparseTT":
        return cls.from_json(json.loads(text))


@dataclass
class AugmentedBlockSparseTT:
    """Order ``d+1`` block-sparse train; mode ``d+1`` is the shadow degree variable."""

    core: BlockSparseTT

    @property
    def d(self) -> int:
        return self.core.d - 1

    @property
    def g(self) -> int:
        return self.core.g

    def degree_part(self, gt: int) -> TensorTrain:
        """Order-``d`` train of the degree-``gt`` summand."""
        comps = [c.copy() for c in self.core.tt.components]
        last = comps.pop()
        m = self.g - gt
        comps[-1] = np.tensordot(comps[-1], last[:, m, :], axes=([2], [0]))
        return TensorTrain(comps)

    def summed(self) -> TensorTrain:
        """Order-``d`` train of the full sum (shadow mode contracted with ones)."""
        comps = [c.copy() for c in self.core.tt.components]
        last = comps.pop().sum(axis=1)
        comps[-1] = np.tensordot(comps[-1], last, axes=([2], [0]))
        return TensorTrain(comps)

    def to_json(self) -> dict:
        return {"augmented": True, **self.core.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentedBlockSparseTT":
        return cls(BlockSparseTT.from_json(doc))


def _left_block_step(comps, bs: BlockStructure, k: int) -> None:
    """Per-group QR of core ``k`` (0-based); the block-diagonal R moves into core ``k+1``."""
    c = comps[k]
    r0, n, r1 = c.shape
    mat = c.reshape(r0 * n, r1)
    mask = bs.mask(k + 1).reshape(r0 * n, r1)
    q_full = np.zeros_like(mat)
    r_full = np.zeros((r1, r1))
    for sl in bs.group_slices(k + 1):
        if sl.stop == sl.start:
            continue
        rows = np.nonzero(mask[:, sl].any(axis=1))[0]
        if rows.size < sl.stop - sl.start:
            raise PatternError(f"group at interface {k + 1} is larger than the slots feeding it")
        q, r = qr_positive(mat[np.ix_(rows, np.arange(sl.start, sl.stop))])
        q_full[np.ix_(rows, np.arange(sl.start, sl.stop))] = q
        r_full[sl, sl] = r
    comps[k] = q_full.reshape(r0, n, r1)
    comps[k + 1] = np.tensordot(r_full, comps[k + 1], axes=([1], [0]))


def _right_block_step(comps, bs: BlockStructure, k: int) -> None:
    """Per-group LQ of core ``k`` (0-based); the block-diagonal L moves into core ``k-1``."""
    c = comps[k]
    r0, n, r1 = c.shape
    mat = c.reshape(r0, n * r1)
    mask = bs.mask(k + 1).reshape(r0, n * r1)
    q_full = np.zeros_like(mat)
    l_full = np.zeros((r0, r0))
    for sl in bs.group_slices(k):
        if sl.stop == sl.start:
            continue
        cols = np.nonzero(mask[sl].any(axis=0))[0]
        if cols.size < sl.stop - sl.start:
            raise PatternError(f"group at interface {k} is larger than the slots it feeds")
        q, r = qr_positive(mat[np.ix_(np.arange(sl.start, sl.stop), cols)].T)
        q_full[np.ix_(np.arange(sl.start, sl.stop), cols)] = q.T
        l_full[sl, sl] = r.T
    comps[k] = q_full.reshape(r0, n, r1)
    comps[k - 1] = np.tensordot(comps[k - 1], l_full, axes=([2], [0]))


def block_move_core(t: BlockSparseTT, pos: int) -> BlockSparseTT:
    """Mixed-canonical gauge with the free core at 1-based ``pos``, preserving the pattern."""
    comps = [c.copy() for c in t.tt.components]
    for k in range(pos - 1):
        _left_block_step(comps, t.structure, k)
    for k in range(t.d - 1, pos - 1, -1):
        _right_block_step(comps, t.structure, k)
    ortho = "left" if pos == t.d else "right" if pos == 1 else "mixed"
    return BlockSparseTT(TensorTrain(comps, ortho, pos), t.structure)


def block_orthogonalize(t: BlockSparseTT, direction: str) -> BlockSparseTT:
    if direction == "left":
        return block_move_core(t, t.d)
    if direction == "right":
        return block_move_core(t, 1)
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


def random_block_sparse(bs: BlockStructure, seed) -> BlockSparseTT:
    """Standard-normal entries on the pattern, then block right-orthogonalized."""
    rng = np.random.default_rng(seed)
    comps = []
    for k, shape in enumerate(bs.core_shapes(), start=1):
        comps.append(rng.standard_normal(shape) * bs.mask(k))
    return block_orthogonalize(BlockSparseTT(TensorTrain(comps), bs), "right")


def to_dense_tt(t: BlockSparseTT) -> TensorTrain:
    return t.tt.copy()


def block_tt_svd(c, g: int, rel_cutoff: float = 1e-12) -> BlockSparseTT:
    """Degree-resolved TT-SVD of a coefficient tensor with ``L c = g c``.

    Every unfolding of such a tensor is block diagonal in (left degree,
    right degree); decomposing the blocks separately yields group sizes and
    components that obey the block pattern by construction.
    """
    x = as_array(c)
    d = x.ndim
    p = x.shape[0]
    scale = float(np.linalg.norm(x))
    if scale == 0.0:
        raise ValueError("block_tt_svd needs a nonzero tensor")
    deg = degree_operator_apply(np.ones(x.shape))
    off = np.abs(x[deg != g]).max(initial=0.0)
    if off > 1e-12 * scale:
        raise ValueError(f"tensor is not homogeneous of degree {g} (off-degree mass {off:.2e})")
    rho = np.zeros((d + 1, g + 1), dtype=int)
    rho[0, 0] = 1
    rho[d, g] = 1
    comps = []
    left_deg = np.array([0])
    rem = x.reshape(1, -1)
    for k in range(1, d):
        r0 = left_deg.size
        mat = rem.reshape(r0 * p, -1)
        row_deg = (left_deg[:, None] + np.arange(p)[None, :]).ravel()
        # row 0 of this unfolding has the first k modes at degree 0
        col_deg = deg.reshape(p**k, -1)[0]
        blocks = []
        for h in range(g + 1):
            rows = np.nonzero(row_deg == h)[0]
            cols = np.nonzero(col_deg == g - h)[0]
            if rows.size == 0 or cols.size == 0:
                blocks.append((rows, cols, np.zeros((rows.size, 0)), np.zeros((0, cols.size))))
                continue
            u, s, vt = np.linalg.svd(mat[np.ix_(rows, cols)], full_matrices=False)
            r = int(np.sum(s > rel_cutoff * scale))
            blocks.append((rows, cols, u[:, :r], s[:r, None] * vt[:r]))
            rho[k, h] = r
        r1 = int(rho[k].sum())
        core = np.zeros((r0 * p, r1))
        new_rem = np.zeros((r1, mat.shape[1]))
        start = 0
        for h, (rows, cols, u, sv) in enumerate(blocks):
            r = u.shape[1]
            core[np.ix_(rows, np.arange(start, start + r))] = u
            new_rem[np.ix_(np.arange(start, start + r), cols)] = sv
            start += r
        comps.append(core.reshape(r0, p, r1))
        rem = new_rem
        left_deg = np.repeat(np.arange(g + 1), rho[k])
    last = rem.reshape(left_deg.size, p, 1)
    comps.append(last)
    bs = BlockStructure(d, g, p, rho)
    comps[-1] = comps[-1] * bs.mask(d)
    return BlockSparseTT(TensorTrain(comps, "left", d), bs)


def project_to_pattern(t: TensorTrain, bs: BlockStructure) -> BlockSparseTT:
    comps = [c * bs.mask(k) for k, c in enumerate(t.components, start=1)]
    return BlockSparseTT(TensorTrain(comps), bs)


def tt_param_ranks(r: int, d: int, p: int) -> list[int]:
    return [1] + [min(r, p**k, p ** (d - k)) for k in range(1, d)] + [1]


def dof_count(s: ps.SpaceDescriptor) -> int:
    """Parameter count of an ansatz space.

    Block-sparse families count allowed pattern entries; ``T`` counts the raw
    entries of components with ranks ``min(r, p^k, p^(d-k))``; ``V``, ``W``
    and ``S`` report their dimension.
    """
    if s.family in ("V", "W") or (s.family == "S" and s.rho is None):
        return ps.space_dimension(s)
    if s.family == "T":
        r = tt_param_ranks(s.r, s.d, s.p)
        return int(sum(r[k] * s.p * r[k + 1] for k in range(s.d)))
    if s.family == "B":
        return build_block_structure(s.d, s.g, s.rho).dof()
    if s.family == "S" and s.aug:
        return build_augmented(s.d, s.g, s.rho).dof()
    if s.family == "S":
        return sum(build_block_structure(s.d, gt, s.rho, p=s.p).dof() for gt in range(s.g + 1))
    raise ps.UnsupportedSpaceError(f"no DOF count for {s}")


def dof_report(spaces) -> list[dict]:
    """DOF rows with the published reference value alongside where one exists."""
    rows = []
    for s in spaces:
        if isinstance(s, str):
            s = ps.parse_space(s)
        key = ps.format_space(s)
        row = {"space": key, "dof": dof_count(s), "reference": REFERENCE_DOF.get(key)}
        if key in CONVENTION_MISMATCH:
            row["note"] = "reference value uses a different counting convention; not comparable"
        rows.append(row)
    return rows


def bounds_table(d: int, g: int, rho_max: Optional[int] = None, k_loc: Optional[int] = None) -> dict:
    """Group-size bounds per interface and degree (global and, optionally, locality)."""
    bound = [[rank_bound(d, g, k, gt) for gt in range(g + 1)] for k in range(d + 1)]
    out = {"d": d, "g": g, "global": bound}
    if k_loc is not None:
        out["k_loc"] = k_loc
        out["local"] = [local_rank_bound(g, gt, k_loc) for gt in range(g + 1)] if g > 0 else [1]
        out["local_augmented"] = [local_rank_bound(g, gt, k_loc, True) for gt in range(g + 1)] if g > 0 else [1]
    if rho_max is not None:
        bs = build_block_structure(d, g, rho_max, k_loc)
        out["rho_max"] = rho_max
        out["structure"] = bs.rho.tolist()
        out["ranks"] = list(bs.ranks)
        out["dof"] = bs.dof()
    return out
