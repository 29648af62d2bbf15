"""Recovery studies: Riccati value functions, Gaussian densities and ingested samples.

Every study sweeps over sample sizes ``M`` with several independent trials
per size.  Trial ``t`` at the ``i``-th sample size draws its training set
from ``SeedSequence([seed, i, t, 0])``, its test set from
``SeedSequence([seed, i, t, 1])`` and initializes the solver with the
first word of ``SeedSequence([seed, i, t])``.  Error bands use the 0.15 and
0.85 empirical quantiles with linear interpolation between order statistics.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import block_sparse as bsp
from . import poly_spaces as ps
from .regression import FitOptions, SampleSet, fit_space

log = logging.getLogger(__name__)

PROBLEMS = ("riccati", "gaussian", "ingest")
QUANTILES = (0.15, 0.5, 0.85)


class ConfigError(ValueError):
    pass


class AREError(RuntimeError):
    pass


class SampleFileError(ValueError):
    pass


# ---- Riccati ---------------------------------------------------------------

def discretize_heat_equation(d: int):
    """Finite differences for the controlled 1-D heat equation on ``[-1, 1]``.

    Neumann ends via ghost nodes, control acting on ``[-0.4, 0.4]``,
    ``Q = h * I``.  Returns ``(A, B, Q)``.
    """
    if d < 2:
        raise ValueError("need at least two grid nodes")
    h = 2.0 / (d - 1)
    x = np.linspace(-1.0, 1.0, d)
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] = -2.0
        if i > 0:
            A[i, i - 1] = 1.0
        if i < d - 1:
            A[i, i + 1] = 1.0
    # ghost nodes y_{-1} = y_1 and y_d = y_{d-2}
    A[0, 1] = 2.0
    A[d - 1, d - 2] = 2.0
    A /= h * h
    B = (np.abs(x) <= 0.4 + 1e-12).astype(float).reshape(d, 1)
    Q = h * np.eye(d)
    return A, B, Q


def _is_hurwitz(M: np.ndarray) -> bool:
    # margin keeps marginally stable modes (e.g. a zero eigenvalue lost in rounding) out
    margin = 1e-8 * max(np.linalg.norm(M, 2), 1.0)
    return bool(np.max(np.linalg.eigvals(M).real) < -margin)


def _stabilizing_gain(A, B, R_inv) -> np.ndarray:
    n, m = B.shape
    if _is_hurwitz(A):
        return np.zeros((m, n))
    for alpha in (1.0, 10.0, 100.0, 1e3, 1e4):
        K = alpha * R_inv @ B.T
        if _is_hurwitz(A - B @ K):
            return K
    # Bass' method; needs (A, B) controllable
    beta = np.linalg.norm(A, 2) + 1.0
    As = A + beta * np.eye(n)
    Z = scipy.linalg.solve_continuous_lyapunov(As, 2.0 * B @ B.T)
    try:
        K = B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError as e:
        raise AREError("could not find a stabilizing initial gain") from e
    if not _is_hurwitz(A - B @ K):
        raise AREError("could not find a stabilizing initial gain")
    return K


def are_residual(A, B, Q, lam, P) -> np.ndarray:
    R_inv = np.linalg.inv(np.atleast_2d(np.asarray(lam, dtype=float)))
    return A.T @ P + P @ A - P @ B @ R_inv @ B.T @ P + Q


def solve_are(A, B, Q, lam, max_iter: int = 100, rtol: float = 1e-10) -> np.ndarray:
    """Stabilizing solution of ``A'P + PA - P B R^-1 B' P + Q = 0`` with ``R = lam``.

    Newton-Kleinman: each step solves one Lyapunov equation for the current
    closed-loop matrix.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(lam, dtype=float))
    R_inv = np.linalg.inv(R)
    K = _stabilizing_gain(A, B, R_inv)
    qn = np.linalg.norm(Q)
    res = np.inf
    for _ in range(max_iter):
        Ak = A - B @ K
        P = scipy.linalg.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K = R_inv @ B.T @ P
        res = np.linalg.norm(are_residual(A, B, Q, R, P))
        if res <= rtol * qn:
            return P
    raise AREError(f"Newton-Kleinman did not converge in {max_iter} steps (residual {res:.3e})")


# ---- Gaussian ---------------------------------------------------------------

def gaussian_target(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.sum(np.asarray(x) ** 2, axis=1))


def gaussian_rank1_oracle(d: int, p: int) -> float:
    """Relative L2 error of the product of univariate Legendre projections of ``exp(-t^2)``.

    For ``f = prod phi(x_k)`` and the degree ``< p`` projection ``P phi``,
    ``||f - prod P phi||^2 / ||f||^2 = 1 - (||P phi||^2 / ||phi||^2)^d``.
    """
    t, w = np.polynomial.legendre.leggauss(64)
    w = w / 2.0
    phi = np.exp(-t**2)
    basis = ps.legendre_basis(t, p) * np.sqrt(2 * np.arange(p) + 1)[:, None]
    coef = basis @ (w * phi)
    # integrate the residual directly and use expm1/log1p so small errors do not cancel
    rel = float(np.sum(w * (phi - coef @ basis) ** 2) / np.sum(w * phi**2))
    return math.sqrt(max(0.0, -math.expm1(d * math.log1p(-rel))))


# ---- configuration & results -------------------------------------------------

@dataclass
class ExperimentConfig:
    problem: str
    space: str
    samples: list
    trials: int = 20
    seed: int = 0
    test_size: int = 1000
    options: dict = field(default_factory=dict)
    out: Optional[str] = None
    control_penalty: float = 1.0
    dictionary: Optional[str] = None
    record_timing: bool = False
    dump_dir: Optional[str] = None

    def validate(self) -> ps.SpaceDescriptor:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.samples:
            raise ConfigError("need at least one sample size")
        if any(int(m) != m or m < 1 for m in self.samples):
            raise ConfigError(f"sample sizes must be positive integers, got {self.samples}")
        if any(b <= a for a, b in zip(self.samples, self.samples[1:])):
            raise ConfigError(f"sample sizes must be strictly increasing, got {self.samples}")
        if self.test_size < 1:
            raise ConfigError("test_size must be positive")
        if self.control_penalty <= 0:
            raise ConfigError("control penalty must be positive")
        try:
            space = ps.parse_space(self.space)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        try:
            FitOptions.from_json(self.options)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if self.problem == "riccati" and space.p != 3:
            raise ConfigError(f"the Riccati value function needs p = 3 (degree 2), got {space}")
        return space


@dataclass
class StudyResult:
    problem: str
    space: str
    dof: int
    records: list
    summary: list
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "StudyResult":
        return cls(**doc)


def trial_seed(seed: int, m_index: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, m_index, trial]).generate_state(1)[0])


def quantile_summary(records: list) -> list:
    out = []
    for M in sorted({r["M"] for r in records}):
        errs = np.array([r["error"] for r in records if r["M"] == M and r["error"] is not None], dtype=float)
        row = {"M": M, "q15": None, "median": None, "q85": None}
        if errs.size:
            q = np.quantile(errs, QUANTILES, method="linear")
            row.update(q15=float(q[0]), median=float(q[1]), q85=float(q[2]))
        out.append(row)
    return out


def _dictionary(kind: str, p: int) -> ps.Dictionary:
    return ps.Dictionary(kind, p)


def _uniform(rng, M: int, d: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(M, d))


def run_study(cfg: ExperimentConfig, target: Callable[[np.ndarray], np.ndarray], dictionary: str,
              metadata: Optional[dict] = None) -> StudyResult:
    space = cfg.validate()
    options = FitOptions.from_json(cfg.options)
    dict_ = _dictionary(cfg.dictionary or dictionary, space.p)
    records = []
    for i, M in enumerate(cfg.samples):
        for t in range(cfg.trials):
            rng_train = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, t, 0]))
            rng_test = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, t, 1]))
            x = _uniform(rng_train, M, space.d)
            xt = _uniform(rng_test, cfg.test_size, space.d)
            train = SampleSet(x, target(x), dict_)
            test = SampleSet(xt, target(xt), dict_)
            if cfg.dump_dir:
                dump = Path(cfg.dump_dir)
                dump.mkdir(parents=True, exist_ok=True)
                write_samples_csv(dump / f"train_M{M}_t{t}.csv", x, train.targets)
                write_samples_csv(dump / f"test_M{M}_t{t}.csv", xt, test.targets)
            s = trial_seed(cfg.seed, i, t)
            opts = FitOptions(**{**options.to_json(), "seed": s})
            rec = {"M": M, "trial": t, "seed": s, "space": ps.format_space(space),
                   "error": None, "sweeps": 0, "seconds": None}
            t0 = time.perf_counter()
            try:
                _, report = fit_space(space, train, opts, test)
                err = report.test_error
                rec["error"] = float(err) if err is not None and math.isfinite(err) else None
                rec["sweeps"] = report.sweeps
                rec["termination"] = report.termination
            except Exception as e:  # per-trial failures are recorded, not fatal
                log.warning("trial M=%d t=%d failed: %s", M, t, e)
                rec["failure"] = f"{type(e).__name__}: {e}"
            if cfg.record_timing:
                rec["seconds"] = time.perf_counter() - t0
            records.append(rec)
    meta = {"dictionary": dict_.kind, "domain": "[-1,1]^d", "sampling": "uniform",
            "test_size": cfg.test_size, "seed": cfg.seed, "trials": cfg.trials,
            "options": options.to_json(),
            "thresholds": "error thresholds used for acceptance are defined by this package"}
    meta.update(metadata or {})
    return StudyResult(cfg.problem, ps.format_space(space), bsp.dof_count(space), records,
                       quantile_summary(records), meta)


def riccati_matrix(d: int, control_penalty: float = 1.0) -> np.ndarray:
    A, B, Q = discretize_heat_equation(d)
    return solve_are(A, B, Q, control_penalty)


def run_riccati_study(cfg: ExperimentConfig) -> StudyResult:
    space = cfg.validate()
    P = riccati_matrix(space.d, cfg.control_penalty)

    def target(x):
        return np.einsum("mi,ij,mj->m", x, P, x)

    meta = {"control_penalty": cfg.control_penalty,
            "discretization": "second differences, Neumann ghost nodes, h = 2/(d-1), Q = h*I, "
                              "control on |x| <= 0.4"}
    return run_study(cfg, target, "monomial", meta)


def run_gaussian_study(cfg: ExperimentConfig) -> StudyResult:
    space = cfg.validate()
    meta = {"target": "exp(-||x||^2)",
            "rank1_oracle": gaussian_rank1_oracle(space.d, space.p)}
    return run_study(cfg, gaussian_target, "legendre", meta)


# ---- sample files -------------------------------------------------------------

def write_samples_csv(path, points, targets) -> None:
    points = np.atleast_2d(points)
    d = points.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"x_{k + 1}" for k in range(d)] + ["y"])
        for row, y in zip(points, np.ravel(targets)):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def _parse_float(text: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise SampleFileError(f"line {line}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise SampleFileError(f"line {line}: non-finite value {text!r}")
    return v


def read_samples(path, fmt: Optional[str] = None) -> tuple[np.ndarray, np.ndarray]:
    """Points and targets from a CSV (header ``x_1..x_d,y``) or JSON sample file."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SampleFileError(f"line {e.lineno}: {e.msg}") from None
        pts, ys = doc.get("points"), doc.get("targets")
        if pts is None or ys is None:
            raise SampleFileError("JSON sample files need 'points' and 'targets'")
        if len(pts) != len(ys) or not pts:
            raise SampleFileError(f"{len(pts)} points but {len(ys)} targets")
        d = len(pts[0])
        for i, (row, y) in enumerate(zip(pts, ys), start=1):
            if len(row) != d:
                raise SampleFileError(f"sample {i}: expected {d} coordinates, got {len(row)}")
            for v in list(row) + [y]:
                if not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise SampleFileError(f"sample {i}: non-finite or non-numeric value {v!r}")
        return np.array(pts, dtype=float), np.array(ys, dtype=float)
    if fmt != "csv":
        raise SampleFileError(f"unknown sample format {fmt!r}")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise SampleFileError("line 1: empty file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"x_{k + 1}" for k in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise SampleFileError(f"line 1: header must be {','.join(expected) if d >= 1 else 'x_1,...,x_d,y'}, "
                              f"got {','.join(header)}")
    pts, ys = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise SampleFileError(f"line {line}: expected {d + 1} values, got {len(row)}")
        vals = [_parse_float(v.strip(), line) for v in row]
        pts.append(vals[:-1])
        ys.append(vals[-1])
    if not pts:
        raise SampleFileError("no sample rows")
    return np.array(pts, dtype=float), np.array(ys, dtype=float)


def ingest_samples(path, fmt: Optional[str] = None, dictionary: Optional[ps.Dictionary] = None,
                   p: Optional[int] = None) -> SampleSet:
    """Validated sample set from a file; the dictionary defaults to Legendre of size ``p``."""
    pts, ys = read_samples(path, fmt)
    if dictionary is None:
        if p is None:
            raise ValueError("need a dictionary or its size p")
        dictionary = ps.Dictionary("legendre", p)
    return SampleSet(pts, ys, dictionary)


# ---- output -------------------------------------------------------------------

def _tag(result: StudyResult) -> str:
    return f"{result.problem}_" + re.sub(r"[^A-Za-z0-9]+", "_", result.space).strip("_")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def emit_study(result: StudyResult, path) -> list[Path]:
    """Write ``<tag>.jsonl`` (one record per trial) and ``<tag>_quantiles.csv`` under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tag = _tag(result)
    jl = out / f"{tag}.jsonl"
    with open(jl, "w", encoding="utf-8", newline="\n") as f:
        for rec in result.records:
            f.write(json.dumps(rec) + "\n")
    cs = out / f"{tag}_quantiles.csv"
    with open(cs, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["M", "q15", "median", "q85"])
        for row in result.summary:
            w.writerow([row["M"], _fmt(row["q15"]), _fmt(row["median"]), _fmt(row["q85"])])
    return [jl, cs]
