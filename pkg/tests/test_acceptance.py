"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
from __future__ import annotations

import time
from contextlib import contextmanager
from math import comb

import numpy as np
import pytest

from bstt import block_sparse as bsp
from bstt import experiments as ex
from bstt import poly_spaces as ps
from bstt.regression import FitOptions, SampleSet, evaluate, fit_homogeneous, fit_sum, fit_tt
from bstt.symmetric import (coefficient_evaluate, coefficient_to_symmetric, random_symmetric,
                            symmetric_to_coefficient)


@pytest.fixture
def report(capsys):
    """Yield a context manager that times a criterion and prints its verdict."""

    @contextmanager
    def run(number: int, name: str, limit_s: float):
        t0 = time.perf_counter()
        detail = {}
        ok = False
        try:
            yield detail
            ok = True
        finally:
            dt = time.perf_counter() - t0
            ok = ok and dt < limit_s
            extra = " ".join(f"{k}={v}" for k, v in detail.items())
            with capsys.disabled():
                print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name} ({dt:.2f}s) {extra}".rstrip())
        assert dt < limit_s, f"runtime {dt:.1f}s exceeds {limit_s}s"

    return run


def _random_structures(rng, n, max_d, max_g):
    for _ in range(n):
        d = int(rng.integers(1, max_d + 1))
        g = int(rng.integers(0, max_g + 1))
        rho_max = int(rng.integers(1, 4))
        yield d, g, bsp.build_block_structure(d, g, rho_max)


def test_criterion_01_dof_exactness(report):
    with report(1, "dof exactness", 1.0) as info:
        checked = ["W(d=8,g=2)", "B(rho=4;W(d=8,g=2))", "S(d=6,g=7)", "S(d=6,g=7,rho=1)",
                   "S(d=10,g=5)", "S(d=10,g=5,rho=3)"]
        got = [bsp.dof_count(ps.parse_space(s)) for s in checked]
        info["dof"] = got
        assert got == [36, 94, 1716, 552, 3003, 1726]
        rows = {r["space"]: r for r in bsp.dof_report([ps.parse_space(s) for s in bsp.CONVENTION_MISMATCH])}
        assert all(r.get("note") for r in rows.values())


def test_criterion_02_eigenvector_property(report):
    rng = np.random.default_rng(2)
    with report(2, "eigenvector property", 10.0) as info:
        worst = 0.0
        for i, (d, g, bs) in enumerate(_random_structures(rng, 100, 5, 3)):
            c = bsp.random_block_sparse(bs, seed=i).dense()
            err = np.linalg.norm(bsp.degree_operator_apply(c) - g * c)
            worst = max(worst, err / np.linalg.norm(c))
            assert err <= 1e-12 * np.linalg.norm(c)
        info["worst_rel"] = f"{worst:.1e}"


def test_criterion_03_oracle_equivalence(report):
    rng = np.random.default_rng(3)
    with report(3, "oracle equivalence", 10.0) as info:
        worst = 0.0
        for i, (d, g, bs) in enumerate(_random_structures(rng, 50, 4, 3)):
            t = bsp.random_block_sparse(bs, seed=100 + i)
            x = rng.uniform(-1, 1, (100, d))
            fast = evaluate(t, SampleSet(x, np.zeros(100), ps.Dictionary("monomial", g + 1)))
            oracle = coefficient_evaluate(t.dense(), x)
            worst = max(worst, np.abs(fast - oracle).max())
            assert np.abs(fast - oracle).max() <= 1e-11
        info["worst_abs"] = f"{worst:.1e}"


def test_criterion_04_symmetric_round_trip(report):
    rng = np.random.default_rng(4)
    with report(4, "symmetric round trip", 10.0) as info:
        worst_rt = worst_ev = 0.0
        for i in range(40):
            d, g = int(rng.integers(1, 5)), int(rng.integers(0, 4))
            b = random_symmetric(d, g, seed=i)
            c = symmetric_to_coefficient(b)
            c2 = symmetric_to_coefficient(coefficient_to_symmetric(c, g))
            worst_rt = max(worst_rt, np.abs(c2 - c).max())
            assert np.abs(c2 - c).max() <= 1e-13
            x = rng.uniform(-1, 1, (50, d))
            t = bsp.block_tt_svd(c, g)
            vals = [b.evaluate(x), coefficient_evaluate(c, x),
                    evaluate(t, SampleSet(x, np.zeros(50), ps.Dictionary("monomial", g + 1)))]
            dev = max(np.abs(vals[0] - vals[1]).max(), np.abs(vals[0] - vals[2]).max())
            worst_ev = max(worst_ev, dev)
            assert dev <= 1e-11
        info["round_trip"] = f"{worst_rt:.1e}"
        info["evaluators"] = f"{worst_ev:.1e}"


def test_criterion_05_locality_rank_bounds(report):
    rng = np.random.default_rng(5)
    with report(5, "locality rank bounds", 30.0) as info:
        tight = 0
        for i in range(50):
            d, g, k_loc = int(rng.integers(2, 7)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
            b = random_symmetric(d, g, seed=1000 + i, k_loc=k_loc)
            assert b.locality() <= k_loc
            rho = bsp.block_tt_svd(symmetric_to_coefficient(b), g).structure.rho
            for k in range(1, d):
                for gt in range(g + 1):
                    bound = bsp.local_rank_bound(g, gt, k_loc)
                    assert rho[k, gt] <= bound, (d, g, k_loc, k, gt)
                    tight += int(rho[k, gt] == bound and 0 < gt < g)
        info["tight_groups"] = tight


def test_criterion_06_als_monotonicity(report):
    rng = np.random.default_rng(6)
    with report(6, "ALS monotonicity", 30.0) as info:
        worst = 0.0
        for i in range(10):
            d = int(rng.integers(3, 6))
            x = rng.uniform(-1, 1, (120, d))
            y = np.sin(x.sum(axis=1)) + 0.1 * rng.standard_normal(120)
            opts = FitOptions(lam=0.0, max_sweeps=8, seed=i)
            kind = i % 3
            if kind == 0:
                s = SampleSet(x, y, ps.Dictionary("legendre", 3))
                _, rep = fit_homogeneous(s, d, 2, 2, opts)
            elif kind == 1:
                s = SampleSet(x, y, ps.Dictionary("legendre", 3))
                _, rep = fit_sum(s, d, 2, 2, FitOptions(lam=0.0, max_outer=4, seed=i))
            else:
                s = SampleSet(x, y, ps.Dictionary("legendre", 4))
                _, rep = fit_tt(s, 3, opts)
            r = np.asarray(rep.micro_residuals)
            assert len(r) > 2
            rise = float(np.max(np.diff(r)))
            worst = max(worst, rise)
            assert rise <= 1e-10
        info["max_increase"] = f"{worst:.1e}"


def test_criterion_07_riccati_recovery(report):
    with report(7, "Riccati recovery", 300.0) as info:
        cfg = ex.ExperimentConfig(problem="riccati", space="B(rho=4;W(d=8,g=2))", samples=[1000], trials=10)
        res = ex.run_riccati_study(cfg)
        med = res.summary[0]["median"]
        info["median"] = f"{med:.2e}"
        assert med <= 1e-8


def test_criterion_08_gaussian_trend(report):
    with report(8, "Gaussian study trend", 900.0) as info:
        cfg = ex.ExperimentConfig(problem="gaussian", space="S(d=6,g=7,rho=1)", samples=[200, 2000], trials=10)
        res = ex.run_gaussian_study(cfg)
        small, large = (row["median"] for row in res.summary)
        info["median_200"], info["median_2000"] = f"{small:.3e}", f"{large:.3e}"
        assert large < small

        cfg = ex.ExperimentConfig(problem="gaussian", space="T(r=1;V(d=6,p=8))", samples=[2000], trials=10)
        rank1 = ex.run_gaussian_study(cfg).summary[0]["median"]
        oracle = ex.gaussian_rank1_oracle(6, 8)
        info["rank1"], info["oracle"] = f"{rank1:.3e}", f"{oracle:.3e}"
        assert oracle / 2 <= rank1 <= 2 * oracle


def test_criterion_09_variation_constants(report):
    with report(9, "variation constants", 30.0) as info:
        grid = np.linspace(-1, 1, 201)
        pts = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1)
        sup = float(ps.christoffel_sum(2, 3, pts).max())
        k = ps.variation_constant(ps.V(2, 3)).value
        info["grid_sup"], info["K"] = f"{sup:.4f}", k
        assert k == 3.0**4
        assert abs(sup - k) <= 0.01 * k
        for d in range(1, 11):
            for g in range(0, 8):
                assert ps.variation_constant(ps.W(d, g), weighted=True).value == comb(d - 1 + g, d - 1)


def test_criterion_10_determinism(report, tmp_path):
    with report(10, "determinism", 120.0) as info:
        outputs = []
        for run in ("a", "b"):
            for problem, space in (("riccati", "B(rho=4;W(d=8,g=2))"), ("gaussian", "S(d=6,g=7,rho=1)")):
                cfg = ex.ExperimentConfig(problem=problem, space=space, samples=[100, 200], trials=3, seed=11,
                                          test_size=200)
                res = (ex.run_riccati_study if problem == "riccati" else ex.run_gaussian_study)(cfg)
                outputs.append(ex.emit_study(res, tmp_path / run)[0].read_bytes())
        info["bytes"] = [len(b) for b in outputs[:2]]
        assert outputs[0] == outputs[2] and outputs[1] == outputs[3]
