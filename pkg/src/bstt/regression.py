"""Empirical least-squares fitting on tensor-train ansatz spaces.

All solvers share one sweep engine: the train is right-orthogonalized, then
each core in turn is replaced by the minimum-norm solution of its local
least-squares problem (restricted to the allowed entries) and
left-orthogonalized, pushing the triangular factor into the next core.
Block-sparse trains use per-degree-group QR so forbidden entries stay zero.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import block_sparse as bsp
from . import poly_spaces as ps
from .tensor_core import solve_least_squares
from .tt import OrthogonalityError, TensorTrain, is_left_orthogonal, is_right_orthogonal, qr_positive

TERMINATION_REASONS = ("converged", "max_sweeps", "stagnation")


@dataclass
class SampleSet:
    """Points ``x`` (``M x d``), targets ``y`` and per-coordinate measurement matrices."""

    points: np.ndarray
    targets: np.ndarray
    dictionary: ps.Dictionary

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.points.shape[0] < 1:
            raise ValueError("a sample set needs at least one point")
        if self.targets.shape[0] != self.points.shape[0]:
            raise ValueError(f"{self.points.shape[0]} points but {self.targets.shape[0]} targets")
        if not (np.isfinite(self.points).all() and np.isfinite(self.targets).all()):
            raise ValueError("sample set contains non-finite values")
        # Xi_k has column m equal to Psi(x_k^(m))
        self.xis = [self.dictionary(self.points[:, k]) for k in range(self.d)]

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_targets(self, targets) -> "SampleSet":
        out = object.__new__(SampleSet)
        out.points, out.dictionary, out.xis = self.points, self.dictionary, self.xis
        out.targets = np.asarray(targets, dtype=float).ravel()
        return out

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[idx], self.targets[idx], self.dictionary)


@dataclass
class FitOptions:
    max_sweeps: int = 100
    tol: float = 1e-14
    stagnation_tol: float = 1e-8
    lam: float = 0.0
    seed: int = 0
    max_outer: int = 50
    inner_sweeps: int = 2
    # optional per-micro-step ridge weight (sweep, core) -> lambda; overrides lam
    regularizer: Optional[Callable[[int, int], float]] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_json(cls, doc: Optional[dict]) -> "FitOptions":
        doc = dict(doc or {})
        if "lambda" in doc:  # readable alias for the ridge weight
            if "lam" in doc:
                raise ValueError("give either 'lam' or 'lambda', not both")
            doc["lam"] = doc.pop("lambda")
        known = {f for f in cls.__dataclass_fields__ if f != "regularizer"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown solver options {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("regularizer")
        return d


@dataclass
class FitReport:
    residuals: list = field(default_factory=list)
    micro_residuals: list = field(default_factory=list)
    test_error: Optional[float] = None
    sweeps: int = 0
    termination: str = "max_sweeps"
    seconds: float = 0.0
    seed: int = 0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "FitReport":
        return cls(**doc)


@dataclass
class LinearModel:
    """Coefficients on an explicit list of 0-based exponent tuples."""

    exponents: list
    coef: np.ndarray


Model = Union[TensorTrain, bsp.BlockSparseTT, bsp.AugmentedBlockSparseTT, LinearModel, list]


# ---- stacks -------------------------------------------------------------

def left_update(stack: np.ndarray, xi: np.ndarray, core: np.ndarray) -> np.ndarray:
    """``S'[m, b] = sum_{a,i} S[m, a] Xi[i, m] C[a, i, b]``."""
    m = stack.shape[0]
    r0, n, r1 = core.shape
    tmp = (stack[:, :, None] * xi.T[:, None, :]).reshape(m, r0 * n)
    return tmp @ core.reshape(r0 * n, r1)


def right_update(stack: np.ndarray, xi: np.ndarray, core: np.ndarray) -> np.ndarray:
    """``S'[m, a] = sum_{i,b} C[a, i, b] Xi[i, m] S[m, b]``."""
    m = stack.shape[0]
    r0, n, r1 = core.shape
    tmp = (xi.T[:, :, None] * stack[:, None, :]).reshape(m, n * r1)
    return tmp @ core.reshape(r0, n * r1).T


def left_stack(comps, xis, k: int) -> np.ndarray:
    """Contraction of cores ``0..k-1`` with their measurement matrices."""
    s = np.ones((xis[0].shape[1], 1))
    for j in range(k):
        s = left_update(s, xis[j], comps[j])
    return s


def right_stack(comps, xis, k: int) -> np.ndarray:
    """Contraction of cores ``k..d-1`` with their measurement matrices."""
    s = np.ones((xis[0].shape[1], 1))
    for j in range(len(comps) - 1, k - 1, -1):
        s = right_update(s, xis[j], comps[j])
    return s


def _phi_columns(lstack, xi, rstack, a, i, b) -> np.ndarray:
    return lstack[:, a] * xi.T[:, i] * rstack[:, b]


def _model_parts(model, samples: SampleSet):
    if isinstance(model, bsp.AugmentedBlockSparseTT):
        ones = np.ones((model.g + 1, samples.M))
        return model.core.tt.components, list(samples.xis) + [ones]
    if isinstance(model, bsp.BlockSparseTT):
        return model.tt.components, samples.xis
    if isinstance(model, TensorTrain):
        return model.components, samples.xis
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _check_dims(comps, xis) -> None:
    if len(comps) != len(xis):
        raise ValueError(f"model order {len(comps)} does not match sample dimension {len(xis)}")
    for k, (c, xi) in enumerate(zip(comps, xis)):
        if c.shape[1] != xi.shape[0]:
            raise ValueError(f"mode {k + 1} has size {c.shape[1]} but the dictionary has {xi.shape[0]} functions")


def evaluate(model: Model, samples: SampleSet) -> np.ndarray:
    """Model values at every sample point."""
    if isinstance(model, list):
        return sum((evaluate(m, samples) for m in model), np.zeros(samples.M))
    if isinstance(model, LinearModel):
        return _design_matrix(samples, model.exponents) @ model.coef
    comps, xis = _model_parts(model, samples)
    _check_dims(comps, xis)
    return left_stack(comps, xis, len(comps))[:, 0]


def assemble_phi(model, samples: SampleSet, k: int) -> np.ndarray:
    """Local operator at 1-based core ``k``, shape ``(M, r_{k-1}, n_k, r_k)``.

    Cores left of ``k`` must be left-orthogonal and cores right of it
    right-orthogonal.
    """
    comps, xis = _model_parts(model, samples)
    _check_dims(comps, xis)
    j = k - 1
    if not all(is_left_orthogonal(c) for c in comps[:j]) or not all(
            is_right_orthogonal(c) for c in comps[j + 1:]):
        raise OrthogonalityError(f"model is not in mixed-canonical form at core {k}")
    ls = left_stack(comps, xis, j)
    rs = right_stack(comps, xis, j + 1)
    r0, n, r1 = comps[j].shape
    a, i, b = np.unravel_index(np.arange(r0 * n * r1), (r0, n, r1))
    return _phi_columns(ls, xis[j], rs, a, i, b).reshape(samples.M, r0, n, r1)


# ---- sweep engine ---------------------------------------------------------

def _rel(res: float, ynorm: float) -> float:
    return res / ynorm if ynorm > 0 else res


def _solve_local(A: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    if lam > 0:
        n = A.shape[1]
        A = np.vstack([A, np.sqrt(lam) * np.eye(n)])
        y = np.concatenate([y, np.zeros(n)])
    return solve_least_squares(A, y)


class _Sweeper:
    """ALS on a list of cores with per-core masks and a gauge strategy."""

    def __init__(self, comps, xis, y, masks, structure: Optional[bsp.BlockStructure], options: FitOptions,
                 report: FitReport):
        self.comps = [c.copy() for c in comps]
        self.xis = xis
        self.y = y
        self.masks = masks
        self.flat = [np.nonzero(m.ravel())[0] for m in masks]
        self.idx = [np.unravel_index(f, m.shape) for f, m in zip(self.flat, masks)]
        self.structure = structure
        self.opt = options
        self.report = report
        self.ynorm = float(np.linalg.norm(y))
        self.sweep_no = 0

    def _left_step(self, k):
        if self.structure is None:
            c = self.comps[k]
            r0, n, r1 = c.shape
            q, r = qr_positive(c.reshape(r0 * n, r1))
            if q.shape[1] != r1:
                raise ValueError("rank exceeds the unfolding size")
            self.comps[k] = q.reshape(r0, n, r1)
            self.comps[k + 1] = np.tensordot(r, self.comps[k + 1], axes=([1], [0]))
        else:
            bsp._left_block_step(self.comps, self.structure, k)

    def _right_step(self, k):
        if self.structure is None:
            c = self.comps[k]
            r0, n, r1 = c.shape
            q, r = qr_positive(c.reshape(r0, n * r1).T)
            if q.shape[1] != r0:
                raise ValueError("rank exceeds the unfolding size")
            self.comps[k] = q.T.reshape(r0, n, r1)
            self.comps[k - 1] = np.tensordot(self.comps[k - 1], r.T, axes=([2], [0]))
        else:
            bsp._right_block_step(self.comps, self.structure, k)

    def residual(self) -> float:
        u = left_stack(self.comps, self.xis, len(self.comps))[:, 0]
        return _rel(float(np.linalg.norm(u - self.y)), self.ynorm)

    def sweep(self) -> float:
        d = len(self.comps)
        for k in range(d - 1, 0, -1):
            self._right_step(k)
        rstacks = [None] * (d + 1)
        rstacks[d] = np.ones((self.y.shape[0], 1))
        for k in range(d - 1, 0, -1):
            rstacks[k] = right_update(rstacks[k + 1], self.xis[k], self.comps[k])
        ls = np.ones((self.y.shape[0], 1))
        res = None
        for k in range(d):
            a, i, b = self.idx[k]
            new = np.zeros(self.comps[k].shape)
            if self.flat[k].size == 0:
                self.report.notes.append(f"core {k + 1}: empty mask, core set to zero")
                res = _rel(float(np.linalg.norm(self.y)), self.ynorm)
            else:
                A = _phi_columns(ls, self.xis[k], rstacks[k + 1], a, i, b)
                lam = self.opt.lam if self.opt.regularizer is None else self.opt.regularizer(self.sweep_no, k + 1)
                v = _solve_local(A, self.y, lam)
                new.flat[self.flat[k]] = v
                res = _rel(float(np.linalg.norm(A @ v - self.y)), self.ynorm)
            self.comps[k] = new
            self.report.micro_residuals.append(res)
            if k < d - 1:
                self._left_step(k)
                ls = left_update(ls, self.xis[k], self.comps[k])
        self.sweep_no += 1
        return res

    def run(self, max_sweeps: int) -> None:
        prev = self.residual()
        self.report.micro_residuals.append(prev)
        self.report.termination = "max_sweeps"
        for _ in range(max_sweeps):
            res = self.sweep()
            self.report.residuals.append(res)
            self.report.sweeps += 1
            if res <= self.opt.tol:
                self.report.termination = "converged"
                break
            if prev - res < self.opt.stagnation_tol * prev:
                self.report.termination = "stagnation"
                break
            prev = res


def _relative_error(model, test: SampleSet) -> float:
    u = evaluate(model, test)
    den = float(np.linalg.norm(test.targets))
    num = float(np.linalg.norm(u - test.targets))
    return num / den if den > 0 else num


def _finish(report: FitReport, model, test: Optional[SampleSet], t0: float):
    if test is not None:
        report.test_error = _relative_error(model, test)
    report.seconds = time.perf_counter() - t0
    return model, report


def micro_step(model, samples: SampleSet, k: int, mask: Optional[np.ndarray] = None,
               lam: float = 0.0) -> np.ndarray:
    """Masked least-squares update of 1-based core ``k``; returns the new core.

    The model must be in mixed-canonical form at ``k``.  ``mask`` defaults to
    the block pattern for block-sparse models and to all entries otherwise.
    """
    phi = assemble_phi(model, samples, k)
    comps, _ = _model_parts(model, samples)
    shape = comps[k - 1].shape
    if mask is None:
        if isinstance(model, bsp.AugmentedBlockSparseTT):
            mask = model.core.structure.mask(k)
        elif isinstance(model, bsp.BlockSparseTT):
            mask = model.structure.mask(k)
        else:
            mask = np.ones(shape, dtype=bool)
    cols = np.nonzero(np.asarray(mask, dtype=bool).ravel())[0]
    new = np.zeros(shape)
    if cols.size:
        A = phi.reshape(samples.M, -1)[:, cols]
        new.flat[cols] = _solve_local(A, samples.targets, lam)
    return new


def _fit_block(xis, y, bs: bsp.BlockStructure, options: FitOptions, init: bsp.BlockSparseTT,
               report: FitReport, max_sweeps: int) -> bsp.BlockSparseTT:
    masks = [bs.mask(k) for k in range(1, bs.d + 1)]
    sw = _Sweeper(init.tt.components, xis, y, masks, bs, options, report)
    sw.run(max_sweeps)
    comps = [c * m for c, m in zip(sw.comps, masks)]  # exact zeros off-pattern (already zero)
    return bsp.BlockSparseTT(TensorTrain(comps, "left", bs.d), bs)


def fit_homogeneous(samples: SampleSet, d: int, g: int, rho_max: int, options: Optional[FitOptions] = None,
                    test: Optional[SampleSet] = None, k_loc: Optional[int] = None,
                    init: Optional[bsp.BlockSparseTT] = None):
    """Extended ALS on block-sparse homogeneous polynomials of degree ``g``."""
    options = options or FitOptions()
    t0 = time.perf_counter()
    if samples.d != d:
        raise ValueError(f"samples have dimension {samples.d}, expected {d}")
    p = samples.dictionary.p
    bs = bsp.build_block_structure(d, g, rho_max, k_loc, p=p)
    if init is None:
        init = bsp.random_block_sparse(bs, options.seed)
    report = FitReport(seed=options.seed)
    model = _fit_block(samples.xis, samples.targets, bs, options, init, report, options.max_sweeps)
    return _finish(report, model, test, t0)


def _scale_to(model: bsp.BlockSparseTT, xis, target_rms: float) -> bsp.BlockSparseTT:
    u = left_stack(model.tt.components, xis, model.d)[:, 0]
    rms = float(np.sqrt(np.mean(u**2)))
    if rms == 0.0 or target_rms == 0.0:
        return model
    comps = [c.copy() for c in model.tt.components]
    comps[0] = comps[0] * (target_rms / rms)
    return bsp.BlockSparseTT(TensorTrain(comps), model.structure)


def fit_sum(samples: SampleSet, d: int, g: int, rho_max: int, options: Optional[FitOptions] = None,
            test: Optional[SampleSet] = None):
    """Alternate over degrees ``0..g``, fitting each summand to the residual of the others.

    ``report.micro_residuals`` holds the combined residual after every
    degree update; ``report.residuals`` one entry per outer pass.
    """
    options = options or FitOptions()
    t0 = time.perf_counter()
    if samples.d != d:
        raise ValueError(f"samples have dimension {samples.d}, expected {d}")
    p = samples.dictionary.p
    y = samples.targets
    ynorm = float(np.linalg.norm(y))
    seeds = np.random.SeedSequence(options.seed).spawn(g + 1)
    target_rms = ynorm / (g + 1) / np.sqrt(samples.M)
    structures = [bsp.build_block_structure(d, gt, rho_max, p=p) for gt in range(g + 1)]
    parts = [_scale_to(bsp.random_block_sparse(bs, seeds[gt]), samples.xis, target_rms)
             for gt, bs in enumerate(structures)]
    values = [left_stack(m.tt.components, samples.xis, d)[:, 0] for m in parts]
    report = FitReport(seed=options.seed)

    def combined() -> float:
        return _rel(float(np.linalg.norm(sum(values) - y)), ynorm)

    prev = combined()
    report.micro_residuals.append(prev)
    report.termination = "max_sweeps"
    inner = FitOptions(**{**options.to_json(), "max_sweeps": options.inner_sweeps})
    inner.regularizer = options.regularizer
    for _ in range(options.max_outer):
        for gt in range(g + 1):
            z = y - (sum(values) - values[gt])
            sub = FitReport()
            parts[gt] = _fit_block(samples.xis, z, structures[gt], inner, parts[gt], sub, inner.max_sweeps)
            values[gt] = left_stack(parts[gt].tt.components, samples.xis, d)[:, 0]
            report.micro_residuals.append(combined())
        res = combined()
        report.residuals.append(res)
        report.sweeps += 1
        if res <= options.tol:
            report.termination = "converged"
            break
        if prev - res < options.stagnation_tol * prev:
            report.termination = "stagnation"
            break
        prev = res
    return _finish(report, parts, test, t0)


def fit_augmented(samples: SampleSet, d: int, g: int, rho_max: int, options: Optional[FitOptions] = None,
                  test: Optional[SampleSet] = None):
    """Extended ALS on the order-``d+1`` augmented train (shadow mode contracted with ones)."""
    options = options or FitOptions()
    t0 = time.perf_counter()
    if samples.d != d:
        raise ValueError(f"samples have dimension {samples.d}, expected {d}")
    if samples.dictionary.p != g + 1:
        raise ValueError("augmented fits need a dictionary of size g+1")
    bs = bsp.build_augmented(d, g, rho_max)
    init = bsp.random_block_sparse(bs, options.seed)
    xis = list(samples.xis) + [np.ones((g + 1, samples.M))]
    report = FitReport(seed=options.seed)
    core = _fit_block(xis, samples.targets, bs, options, init, report, options.max_sweeps)
    return _finish(report, bsp.AugmentedBlockSparseTT(core), test, t0)


def random_tt(d: int, p: int, r: int, seed) -> TensorTrain:
    rng = np.random.default_rng(seed)
    ranks = bsp.tt_param_ranks(r, d, p)
    return TensorTrain([rng.standard_normal((ranks[k], p, ranks[k + 1])) for k in range(d)])


def fit_tt(samples: SampleSet, r: int, options: Optional[FitOptions] = None, test: Optional[SampleSet] = None):
    """Plain ALS on dense tensor trains with ranks ``min(r, p^k, p^(d-k))``."""
    options = options or FitOptions()
    t0 = time.perf_counter()
    init = random_tt(samples.d, samples.dictionary.p, r, options.seed)
    masks = [np.ones(c.shape, dtype=bool) for c in init.components]
    report = FitReport(seed=options.seed)
    sw = _Sweeper(init.components, samples.xis, samples.targets, masks, None, options, report)
    sw.run(options.max_sweeps)
    return _finish(report, TensorTrain(sw.comps, "left", samples.d), test, t0)


def _design_matrix(samples: SampleSet, exponents) -> np.ndarray:
    out = np.ones((samples.M, len(exponents)))
    e = np.asarray(exponents, dtype=int)
    for k in range(samples.d):
        out *= samples.xis[k][e[:, k]].T
    return out


LINEAR_CAP = 5 * 10**7


def fit_linear(samples: SampleSet, exponents, test: Optional[SampleSet] = None, seed: int = 0):
    """Minimum-norm least squares on an explicit basis of dictionary products."""
    t0 = time.perf_counter()
    if samples.M * len(exponents) > LINEAR_CAP:
        raise MemoryError(f"design matrix {samples.M} x {len(exponents)} exceeds the cap")
    A = _design_matrix(samples, exponents)
    coef = solve_least_squares(A, samples.targets)
    report = FitReport(seed=seed, sweeps=1, termination="converged")
    res = _rel(float(np.linalg.norm(A @ coef - samples.targets)), float(np.linalg.norm(samples.targets)))
    report.residuals.append(res)
    report.micro_residuals.append(res)
    return _finish(report, LinearModel(list(map(tuple, exponents)), coef), test, t0)


def fit_space(space: Union[str, ps.SpaceDescriptor], samples: SampleSet, options: Optional[FitOptions] = None,
              test: Optional[SampleSet] = None):
    """Dispatch to the solver that matches an ansatz-space descriptor."""
    s = ps.parse_space(space) if isinstance(space, str) else space
    options = options or FitOptions()
    if samples.d != s.d:
        raise ValueError(f"space {s} has d={s.d} but samples have d={samples.d}")
    if samples.dictionary.p != s.p:
        raise ValueError(f"space {s} needs a dictionary of size {s.p}, got {samples.dictionary.p}")
    if s.family == "V":
        return fit_linear(samples, ps.multi_indices(s.d, s.p), test, options.seed)
    if s.family == "W":
        return fit_linear(samples, ps.multi_indices(s.d, s.p, degree=s.g), test, options.seed)
    if s.family == "S" and s.rho is None:
        return fit_linear(samples, ps.multi_indices(s.d, s.p, max_degree=s.g), test, options.seed)
    if s.family == "T":
        return fit_tt(samples, s.r, options, test)
    if s.family == "B":
        return fit_homogeneous(samples, s.d, s.g, s.rho, options, test)
    if s.aug:
        return fit_augmented(samples, s.d, s.g, s.rho, options, test)
    return fit_sum(samples, s.d, s.g, s.rho, options, test)
