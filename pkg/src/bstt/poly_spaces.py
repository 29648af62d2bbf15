"""Function dictionaries, ansatz-space descriptors and their size calculators."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from math import comb
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

FAMILIES = ("V", "T", "W", "B", "S")


class UnsupportedSpaceError(ValueError):
    pass


class GradingError(ValueError):
    pass


def monomial_basis(x, p: int) -> np.ndarray:
    """``(1, x, ..., x^{p-1})`` along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((p,) + x.shape)
    out[0] = 1.0
    for k in range(1, p):
        out[k] = out[k - 1] * x
    return out


def legendre_basis(x, p: int) -> np.ndarray:
    """Legendre polynomials ``P_0..P_{p-1}`` with ``P_k(1) = 1`` (Bonnet recurrence)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((p,) + x.shape)
    out[0] = 1.0
    if p > 1:
        out[1] = x
    for k in range(1, p - 1):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _fitted_degree(f: Callable, k: int, p: int) -> int:
    """Degree of entry ``k`` of a dictionary, via exact interpolation on Chebyshev nodes."""
    nodes = np.cos(np.pi * (np.arange(p + 1) + 0.5) / (p + 1))
    vals = np.asarray(f(nodes, p))[k]
    coef = np.polynomial.polynomial.polyfit(nodes, vals, p)
    scale = max(np.max(np.abs(coef)), 1e-300)
    nz = np.nonzero(np.abs(coef) > 1e-9 * scale)[0]
    return int(nz[-1]) if nz.size else -1


@dataclass(frozen=True)
class Dictionary:
    kind: str
    p: int
    evaluator: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("dictionary size must be positive")
        if self.kind not in ("monomial", "legendre", "custom"):
            raise ValueError(f"unknown dictionary kind {self.kind!r}")
        if self.kind == "custom":
            if self.evaluator is None:
                raise ValueError("custom dictionaries need an evaluator")
            for k in range(self.p):
                deg = _fitted_degree(self.evaluator, k, self.p)
                if deg != k:
                    raise GradingError(f"entry {k + 1} has degree {deg}, expected {k}")

    def __call__(self, x) -> np.ndarray:
        if self.kind == "monomial":
            return monomial_basis(x, self.p)
        if self.kind == "legendre":
            return legendre_basis(x, self.p)
        return np.asarray(self.evaluator(np.asarray(x, dtype=float), self.p), dtype=float)

    @property
    def grading(self) -> np.ndarray:
        return np.arange(self.p)


def eval_dictionary(dictionary: Dictionary, x: float) -> np.ndarray:
    return dictionary(float(x))


@dataclass(frozen=True)
class SpaceDescriptor:
    """Ansatz space.

    ``family`` is one of ``V`` (full tensor product), ``T`` (TT rank <= r on V),
    ``W`` (homogeneous of degree g), ``B`` (block-sparse W), ``S`` (degree <= g,
    block-sparse when ``rho`` is set, augmented when ``aug``).
    """

    family: str
    d: int
    p: int
    g: Optional[int] = None
    r: Optional[int] = None
    rho: Optional[int] = None
    aug: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        for name in ("d", "p", "r", "rho"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.g is not None:
            if self.g < 0:
                raise ValueError("g must be nonnegative")
            if self.p != self.g + 1:
                raise ValueError(f"p must equal g+1 (p={self.p}, g={self.g})")
        if self.family in ("W", "B", "S") and self.g is None:
            raise ValueError(f"family {self.family} needs g")
        if self.family == "T" and self.r is None:
            raise ValueError("family T needs r")
        if self.family == "B" and self.rho is None:
            raise ValueError("family B needs rho")
        if self.aug and not (self.family == "S" and self.rho is not None):
            raise ValueError("only S with rho can be augmented")

    @property
    def kind(self) -> str:
        """Family tag: V, T_r(V), W, B_rho(W), S, S_rho or S_rho_aug."""
        if self.family == "T":
            return "T_r(V)"
        if self.family == "B":
            return "B_rho(W)"
        if self.family == "S" and self.rho is not None:
            return "S_rho_aug" if self.aug else "S_rho"
        return self.family

    def __str__(self) -> str:
        return format_space(self)


def V(d: int, p: int) -> SpaceDescriptor:
    return SpaceDescriptor("V", d, p)


def T(r: int, d: int, p: int) -> SpaceDescriptor:
    return SpaceDescriptor("T", d, p, r=r)


def W(d: int, g: int) -> SpaceDescriptor:
    return SpaceDescriptor("W", d, g + 1, g=g)


def B(rho: int, d: int, g: int) -> SpaceDescriptor:
    return SpaceDescriptor("B", d, g + 1, g=g, rho=rho)


def S(d: int, g: int, rho: Optional[int] = None, aug: bool = False) -> SpaceDescriptor:
    return SpaceDescriptor("S", d, g + 1, g=g, rho=rho, aug=aug)


def format_space(s: SpaceDescriptor) -> str:
    if s.family == "V":
        return f"V(d={s.d},p={s.p})"
    if s.family == "T":
        return f"T(r={s.r};V(d={s.d},p={s.p}))"
    if s.family == "W":
        return f"W(d={s.d},g={s.g})"
    if s.family == "B":
        return f"B(rho={s.rho};W(d={s.d},g={s.g}))"
    parts = [f"d={s.d}", f"g={s.g}"]
    if s.rho is not None:
        parts.append(f"rho={s.rho}")
    if s.aug:
        parts.append("aug")
    return "S(" + ",".join(parts) + ")"


_ARGS = r"([^()]*)"


def _kv(body: str, allowed: Sequence[str]) -> dict:
    out = {}
    for item in filter(None, (t.strip() for t in body.split(","))):
        if item == "aug":
            out["aug"] = True
            continue
        m = re.fullmatch(r"(\w+)\s*=\s*(\d+)", item)
        if not m or m.group(1) not in allowed:
            raise ValueError(f"bad parameter {item!r}")
        if m.group(1) in out:
            raise ValueError(f"duplicate parameter {m.group(1)!r}")
        out[m.group(1)] = int(m.group(2))
    return out


def parse_space(text: str) -> SpaceDescriptor:
    """Inverse of ``format_space``; whitespace is ignored."""
    t = re.sub(r"\s+", "", text)
    m = re.fullmatch(r"([VW])\(" + _ARGS + r"\)", t)
    if m:
        kv = _kv(m.group(2), ("d", "p") if m.group(1) == "V" else ("d", "g"))
        try:
            return V(kv["d"], kv["p"]) if m.group(1) == "V" else W(kv["d"], kv["g"])
        except KeyError as e:
            raise ValueError(f"missing parameter {e} in {text!r}") from None
    m = re.fullmatch(r"T\(r=(\d+);V\(" + _ARGS + r"\)\)", t)
    if m:
        kv = _kv(m.group(2), ("d", "p"))
        if set(kv) != {"d", "p"}:
            raise ValueError(f"T space needs d and p: {text!r}")
        return T(int(m.group(1)), kv["d"], kv["p"])
    m = re.fullmatch(r"B\(rho=(\d+);W\(" + _ARGS + r"\)\)", t)
    if m:
        kv = _kv(m.group(2), ("d", "g"))
        if set(kv) != {"d", "g"}:
            raise ValueError(f"B space needs d and g: {text!r}")
        return B(int(m.group(1)), kv["d"], kv["g"])
    m = re.fullmatch(r"S\(" + _ARGS + r"\)", t)
    if m:
        kv = _kv(m.group(1), ("d", "g", "rho"))
        if "d" not in kv or "g" not in kv:
            raise ValueError(f"S space needs d and g: {text!r}")
        return S(kv["d"], kv["g"], kv.get("rho"), kv.get("aug", False))
    raise ValueError(f"cannot parse space descriptor {text!r}")


def space_dimension(s: SpaceDescriptor) -> int:
    if s.family == "V":
        return s.p**s.d
    if s.family == "W":
        return comb(s.d + s.g - 1, s.d - 1)
    if s.family == "S" and s.rho is None:
        return comb(s.d + s.g, s.d)
    raise UnsupportedSpaceError(f"{format_space(s)} has no closed-form dimension; use dof_count")


def multi_indices(d: int, p: int, degree: Optional[int] = None, max_degree: Optional[int] = None):
    """0-based exponent tuples in ``{0..p-1}^d`` with a fixed or bounded total degree.

    Tuples come out in lexicographic order.
    """
    out = []

    def rec(prefix, left):
        k = len(prefix)
        if k == d:
            if degree is None or left == 0:
                out.append(tuple(prefix))
            return
        hi = p - 1 if left is None else min(p - 1, left)
        for e in range(hi + 1):
            rec(prefix + [e], None if left is None else left - e)

    if degree is not None:
        rec([], degree)
    elif max_degree is not None:
        rec([], max_degree)
    else:
        rec([], None)
    return out


class VariationConstant(NamedTuple):
    value: float
    upper_bound: bool


def variation_constant(s: SpaceDescriptor, weighted: bool = False) -> VariationConstant:
    """Sup of ``||u||_inf^2 / ||u||^2`` for Legendre-based spaces on ``[-1,1]^d``.

    The ratio is taken against the uniform probability measure, i.e. with
    the L2-orthonormal Legendre scaling ``sqrt(2k+1) P_k``.  For W only an
    upper bound is available unless sampling is optimally weighted.
    """
    if s.family not in ("V", "W"):
        raise UnsupportedSpaceError(f"no variation constant for {format_space(s)}")
    if weighted:
        return VariationConstant(float(space_dimension(s)), False)
    if s.family == "V":
        return VariationConstant(float(s.p ** (2 * s.d)), False)
    d, g = s.d, s.g
    q, r = divmod(g, d)
    bound = comb(d - 1 + g, d - 1) * (2 * q + 3) ** r * (2 * q + 1) ** (d - r)
    return VariationConstant(float(bound), True)


def simplified_w_bound(d: int, g: int) -> float:
    """Coarser closed form ``(3e(d-1+g)/g)^g``, valid for ``0 < g <= d``; for docs/comparison only."""
    if not 0 < g <= d:
        raise ValueError("simplified bound needs 0 < g <= d")
    return (3 * np.e * (d - 1 + g) / g) ** g


def christoffel_sum(d: int, p: int, x: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """``sum_l prod_k (2 l_k + 1) P_{l_k}(x_k)^2`` over V (or W when ``degree`` given).

    ``x`` has shape ``(..., d)``.
    """
    x = np.asarray(x, dtype=float)
    per = legendre_basis(x, p) ** 2 * (2 * np.arange(p) + 1).reshape((p,) + (1,) * x.ndim)
    if degree is None:
        return np.prod(per.sum(axis=0), axis=-1)
    total = np.zeros(x.shape[:-1])
    for idx in multi_indices(d, p, degree=degree):
        term = np.ones(x.shape[:-1])
        for k, e in enumerate(idx):
            term = term * per[e, ..., k]
        total += term
    return total
