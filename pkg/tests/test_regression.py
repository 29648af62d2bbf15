from __future__ import annotations

import json

import numpy as np
import pytest

from bstt import block_sparse as bsp
from bstt import poly_spaces as ps
from bstt.regression import (FitOptions, FitReport, LinearModel, SampleSet, assemble_phi, evaluate, fit_augmented,
                             fit_homogeneous, fit_linear, fit_space, fit_sum, fit_tt, left_stack, micro_step,
                             random_tt, right_stack)
from bstt.symmetric import coefficient_evaluate
from bstt.tt import OrthogonalityError, TensorTrain, move_core, tt_to_dense

LEG3 = ps.Dictionary("legendre", 3)


def make_samples(model, d, M, dictionary, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (M, d))
    s = SampleSet(x, np.zeros(M), dictionary)
    return s.with_targets(evaluate(model, s))


def dense_eval(c, x, dictionary):
    """Oracle: contract the dense coefficient tensor with per-point dictionary vectors."""
    out = np.empty(x.shape[0])
    for j, pt in enumerate(x):
        acc = c
        for k in range(c.ndim):
            acc = np.tensordot(dictionary(pt[k]), acc, axes=([0], [0]))
        out[j] = acc
    return out


# ---- samples and options ---------------------------------------------------

def test_sample_set_measurement_matrices():
    x = np.array([[0.5, -1.0], [1.0, 0.25]])
    s = SampleSet(x, np.zeros(2), LEG3)
    assert len(s.xis) == 2 and s.xis[0].shape == (3, 2)
    np.testing.assert_array_equal(s.xis[1][:, 0], ps.legendre_basis(-1.0, 3))


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.array([[np.nan, 1.0]]), np.zeros(1), LEG3)
    with pytest.raises(ValueError):
        SampleSet(np.zeros((2, 2)), np.zeros(3), LEG3)
    with pytest.raises(ValueError):
        SampleSet(np.zeros((0, 2)), np.zeros(0), LEG3)


def test_fit_options_json():
    o = FitOptions.from_json({"max_sweeps": 5, "lambda": 0.1, "seed": 3})
    assert o.max_sweeps == 5 and o.lam == 0.1 and o.seed == 3
    assert FitOptions.from_json(o.to_json()) == o
    with pytest.raises(ValueError):
        FitOptions.from_json({"bogus": 1})


def test_fit_report_json():
    r = FitReport(residuals=[0.5, 0.1], sweeps=2, termination="stagnation", seed=4)
    assert FitReport.from_json(json.loads(json.dumps(r.to_json()))) == r


# ---- evaluation ----------------------------------------------------------------

def test_evaluate_rank_one_ones():
    t = TensorTrain([np.ones((1, 2, 1)) for _ in range(3)])
    s = SampleSet(np.ones((1, 3)), np.zeros(1), ps.Dictionary("monomial", 2))
    assert evaluate(t, s)[0] == 8.0


def test_evaluate_zero_model():
    t = TensorTrain([np.zeros((1, 3, 1)) for _ in range(3)])
    s = SampleSet(np.random.default_rng(0).uniform(-1, 1, (5, 3)), np.zeros(5), LEG3)
    np.testing.assert_array_equal(evaluate(t, s), np.zeros(5))


@pytest.mark.parametrize("kind", ["legendre", "monomial"])
def test_evaluate_matches_dense_oracle(kind):
    dictionary = ps.Dictionary(kind, 3)
    t = bsp.random_block_sparse(bsp.build_block_structure(4, 2, 2), 1)
    x = np.random.default_rng(2).uniform(-1, 1, (100, 4))
    s = SampleSet(x, np.zeros(100), dictionary)
    np.testing.assert_allclose(evaluate(t, s), dense_eval(t.dense(), x, dictionary), atol=1e-12)
    if kind == "monomial":
        np.testing.assert_allclose(evaluate(t, s), coefficient_evaluate(t.dense(), x), atol=1e-12)


def test_evaluate_dimension_mismatch():
    t = TensorTrain([np.ones((1, 3, 1)) for _ in range(3)])
    with pytest.raises(ValueError):
        evaluate(t, SampleSet(np.zeros((2, 4)), np.zeros(2), LEG3))
    with pytest.raises(ValueError):
        evaluate(t, SampleSet(np.zeros((2, 3)), np.zeros(2), ps.Dictionary("legendre", 4)))


def test_evaluate_augmented_equals_sum_of_parts():
    aug = bsp.AugmentedBlockSparseTT(bsp.random_block_sparse(bsp.build_augmented(4, 2, 2), 3))
    s = SampleSet(np.random.default_rng(4).uniform(-1, 1, (60, 4)), np.zeros(60), LEG3)
    parts = sum(evaluate(aug.degree_part(gt), s) for gt in range(3))
    np.testing.assert_allclose(evaluate(aug, s), parts, atol=1e-12)
    np.testing.assert_allclose(evaluate(aug, s), evaluate(aug.summed(), s), atol=1e-12)


def test_augmented_constant_block_only():
    bs = bsp.build_augmented(3, 2, 2)
    comps = [np.zeros(shape) for shape in bs.core_shapes()]
    for k in range(3):
        comps[k][0, 0, 0] = 1.0  # degree-0 path through the first slot
    comps[3][0, 2, 0] = 2.5  # shadow index g - 0
    aug = bsp.AugmentedBlockSparseTT(bsp.BlockSparseTT(TensorTrain(comps), bs))
    s = SampleSet(np.random.default_rng(5).uniform(-1, 1, (10, 3)), np.zeros(10), LEG3)
    np.testing.assert_allclose(evaluate(aug, s), 2.5, atol=1e-14)


# ---- local operator --------------------------------------------------------------

def test_phi_d1_is_xi_transpose():
    t = TensorTrain([np.random.default_rng(6).standard_normal((1, 3, 1))])
    s = SampleSet(np.random.default_rng(7).uniform(-1, 1, (8, 1)), np.zeros(8), LEG3)
    np.testing.assert_array_equal(assemble_phi(t, s, 1)[:, 0, :, 0], s.xis[0].T)


def test_phi_reproduces_evaluation_for_every_core():
    bs = bsp.build_block_structure(5, 2, 2)
    t = bsp.random_block_sparse(bs, 8)
    s = SampleSet(np.random.default_rng(9).uniform(-1, 1, (30, 5)), np.zeros(30), LEG3)
    u = evaluate(t, s)
    for k in range(1, 6):
        m = bsp.block_move_core(t, k)
        phi = assemble_phi(m, s, k)
        np.testing.assert_allclose(np.einsum("mabc,abc->m", phi, m.tt.components[k - 1]), u, atol=1e-12)


def test_phi_matches_from_scratch_contraction():
    t = move_core(random_tt(4, 3, 2, 10), 3)
    s = SampleSet(np.random.default_rng(11).uniform(-1, 1, (20, 4)), np.zeros(20), LEG3)
    phi = assemble_phi(t, s, 3)
    c = t.components
    left = np.einsum("im,ia,jm,ajb->mb", s.xis[0], c[0][0], s.xis[1], c[1])
    right = np.einsum("aib,im->ma", c[3], s.xis[3])
    ref = np.einsum("ma,im,mb->maib", left, s.xis[2], right.reshape(20, -1))
    np.testing.assert_allclose(phi, ref, atol=1e-13)
    # cached stacks agree with their definitions
    np.testing.assert_allclose(left_stack(c, s.xis, 2), left, atol=1e-13)
    np.testing.assert_allclose(right_stack(c, s.xis, 3), right.reshape(20, -1), atol=1e-13)


def test_phi_requires_mixed_canonical_form():
    t = random_tt(4, 3, 2, 12)
    s = SampleSet(np.zeros((3, 4)), np.zeros(3), LEG3)
    with pytest.raises(OrthogonalityError):
        assemble_phi(t, s, 2)


# ---- micro-steps -----------------------------------------------------------------

def test_micro_step_matches_restricted_oracle():
    bs = bsp.build_block_structure(4, 2, 2)
    truth = bsp.random_block_sparse(bs, 13)
    s = make_samples(truth, 4, 200, LEG3, 14)
    model = bsp.block_move_core(bsp.random_block_sparse(bs, 15), 2)
    before = np.linalg.norm(evaluate(model, s) - s.targets)
    new = micro_step(model, s, 2)
    assert np.all(new[~bs.mask(2)] == 0.0)
    comps = [c.copy() for c in model.tt.components]
    comps[1] = new
    after = np.linalg.norm(evaluate(TensorTrain(comps), s) - s.targets)
    assert after <= before
    A = assemble_phi(model, s, 2).reshape(200, -1)[:, bs.mask(2).ravel()]
    v, *_ = np.linalg.lstsq(A, s.targets, rcond=None)
    assert abs(after - np.linalg.norm(A @ v - s.targets)) <= 1e-10 * max(1.0, np.linalg.norm(s.targets))


def test_micro_step_empty_mask():
    t = move_core(random_tt(3, 3, 2, 16), 2)
    s = SampleSet(np.zeros((4, 3)), np.ones(4), LEG3)
    new = micro_step(t, s, 2, mask=np.zeros(t.components[1].shape, dtype=bool))
    assert np.all(new == 0.0)


def test_micro_step_d1_is_linear_regression():
    s = make_samples(LinearModel([(0,), (1,), (2,)], np.array([1.0, -2.0, 0.5])), 1, 20, LEG3, 17)
    t = TensorTrain([np.zeros((1, 3, 1))])
    new = micro_step(t, s, 1)
    np.testing.assert_allclose(new.ravel(), [1.0, -2.0, 0.5], atol=1e-12)


def test_ridge_shrinks_solution():
    s = make_samples(LinearModel([(0,), (1,), (2,)], np.array([1.0, -2.0, 0.5])), 1, 20, LEG3, 18)
    t = TensorTrain([np.zeros((1, 3, 1))])
    assert np.linalg.norm(micro_step(t, s, 1, lam=10.0)) < np.linalg.norm(micro_step(t, s, 1))


# ---- solvers -----------------------------------------------------------------------

def test_fit_homogeneous_self_recovery():
    bs = bsp.build_block_structure(6, 2, 2)
    errs = []
    for seed in range(10):
        truth = bsp.random_block_sparse(bs, [99, seed])
        train = make_samples(truth, 6, 10 * bs.dof(), LEG3, seed)
        test = make_samples(truth, 6, 300, LEG3, 1000 + seed)
        _, rep = fit_homogeneous(train, 6, 2, 2, FitOptions(seed=seed), test)
        errs.append(rep.test_error)
    assert np.median(errs) <= 1e-8


def test_fit_homogeneous_invariants():
    bs = bsp.build_block_structure(5, 2, 2)
    truth = bsp.random_block_sparse(bs, 19)
    train = make_samples(truth, 5, 150, LEG3, 20)
    y = train.targets + 0.01 * np.random.default_rng(21).standard_normal(150)  # noisy: no exact fit
    model, rep = fit_homogeneous(train.with_targets(y), 5, 2, 2, FitOptions(seed=22, max_sweeps=8))
    assert np.all(np.diff(rep.micro_residuals) <= 1e-10)
    assert rep.termination in ("converged", "max_sweeps", "stagnation")
    for k, c in enumerate(model.tt.components, start=1):
        assert np.all(c[~bs.mask(k)] == 0.0)
    c = model.dense()
    assert np.linalg.norm(bsp.degree_operator_apply(c) - 2 * c) <= 1e-10 * np.linalg.norm(c)


def test_fit_homogeneous_degree_zero_is_mean():
    rng = np.random.default_rng(23)
    s = SampleSet(rng.uniform(-1, 1, (50, 3)), rng.standard_normal(50), ps.Dictionary("legendre", 1))
    model, _ = fit_homogeneous(s, 3, 0, 1)
    np.testing.assert_allclose(evaluate(model, s), s.targets.mean(), atol=1e-12)


def test_fit_homogeneous_permutation_consistency():
    bs = bsp.build_block_structure(4, 2, 2)
    truth = bsp.random_block_sparse(bs, 24)
    train = make_samples(truth, 4, 120, LEG3, 25)
    test = make_samples(truth, 4, 50, LEG3, 26)
    perm = np.random.default_rng(27).permutation(120)
    m1, _ = fit_homogeneous(train, 4, 2, 2, FitOptions(seed=1))
    m2, _ = fit_homogeneous(train.subset(perm), 4, 2, 2, FitOptions(seed=1))
    assert np.max(np.abs(evaluate(m1, test) - evaluate(m2, test))) <= 1e-10


def sum_target(d, g, rho, seed, degrees):
    return [bsp.random_block_sparse(bsp.build_block_structure(d, gt, rho, p=g + 1), [seed, gt]) for gt in degrees]


def test_fit_sum_and_augmented_self_recovery():
    d, g, rho = 5, 2, 2
    M = 10 * bsp.dof_count(ps.S(d, g, rho))
    e_sum, e_aug = [], []
    for seed in range(10):
        parts = sum_target(d, g, rho, seed, [0, 2])
        train = make_samples(parts, d, M, LEG3, seed)
        test = make_samples(parts, d, 300, LEG3, 500 + seed)
        _, rep = fit_sum(train, d, g, rho, FitOptions(seed=seed), test)
        assert np.all(np.diff(rep.micro_residuals) <= 1e-10)
        e_sum.append(rep.test_error)
        _, rep = fit_augmented(train, d, g, rho, FitOptions(seed=seed), test)
        e_aug.append(rep.test_error)
    assert np.median(e_sum) <= 1e-7
    assert np.median(e_aug) <= 1e-6


def test_fit_sum_degree_zero_matches_homogeneous():
    rng = np.random.default_rng(28)
    s = SampleSet(rng.uniform(-1, 1, (40, 3)), rng.standard_normal(40), ps.Dictionary("legendre", 1))
    parts, _ = fit_sum(s, 3, 0, 1)
    hom, _ = fit_homogeneous(s, 3, 0, 1)
    np.testing.assert_allclose(evaluate(parts, s), evaluate(hom, s), atol=1e-12)


def test_fit_sum_noisy_outer_monotone():
    d, g, rho = 4, 3, 1
    parts = sum_target(d, g, rho, 29, range(g + 1))
    train = make_samples(parts, d, 200, ps.Dictionary("legendre", 4), 30)
    y = train.targets + 0.05 * np.random.default_rng(31).standard_normal(200)
    _, rep = fit_sum(train.with_targets(y), d, g, rho, FitOptions(seed=1, max_outer=6))
    assert np.all(np.diff(rep.micro_residuals) <= 1e-10)
    assert len(rep.residuals) == rep.sweeps


def test_fit_tt_rank_one_separable():
    x = np.random.default_rng(32).uniform(-1, 1, (200, 3))
    dictionary = ps.Dictionary("legendre", 3)
    target = np.prod(1 + x + x**2, axis=1)
    s = SampleSet(x, target, dictionary)
    model, rep = fit_tt(s, 1, FitOptions(seed=0))
    assert rep.residuals[-1] <= 1e-10
    assert np.all(np.diff(rep.micro_residuals) <= 1e-10)


def test_fit_linear_exact():
    d, g = 3, 2
    exps = ps.multi_indices(d, g + 1, max_degree=g)
    coef = np.random.default_rng(33).standard_normal(len(exps))
    s = make_samples(LinearModel(exps, coef), d, 60, LEG3, 34)
    model, rep = fit_linear(s, exps)
    np.testing.assert_allclose(model.coef, coef, atol=1e-10)


@pytest.mark.parametrize("space", ["V(d=3,p=3)", "W(d=3,g=2)", "S(d=3,g=2)", "T(r=3;V(d=3,p=3))",
                                   "B(rho=2;W(d=3,g=2))", "S(d=3,g=2,rho=2)", "S(d=3,g=2,rho=2,aug)"])
def test_fit_space_dispatch(space):
    truth = sum_target(3, 2, 2, 35, [0, 1, 2])
    train = make_samples(truth, 3, 150, LEG3, 36)
    test = make_samples(truth, 3, 50, LEG3, 37)
    model, rep = fit_space(space, train, FitOptions(seed=0), test)
    assert rep.test_error is not None and np.isfinite(rep.test_error)
    if not space.startswith("W") and not space.startswith("B"):
        assert rep.test_error <= 1e-6  # target is an inhomogeneous quadratic, inside these spaces


def test_fit_space_checks_dimensions():
    s = SampleSet(np.zeros((4, 2)), np.zeros(4), LEG3)
    with pytest.raises(ValueError):
        fit_space("W(d=3,g=2)", s)
    with pytest.raises(ValueError):
        fit_space("W(d=2,g=3)", s)


def test_regularizer_callback_is_used():
    calls = []

    def reg(sweep, core):
        calls.append((sweep, core))
        return 0.0

    bs = bsp.build_block_structure(3, 2, 2)
    s = make_samples(bsp.random_block_sparse(bs, 38), 3, 60, LEG3, 39)
    opts = FitOptions(seed=0, max_sweeps=2, regularizer=reg)
    fit_homogeneous(s, 3, 2, 2, opts)
    assert (0, 1) in calls and (0, 3) in calls


def test_tt_fit_reconstructs_dense_equivalent():
    truth = random_tt(3, 3, 2, 40)
    train = make_samples(truth, 3, 200, LEG3, 41)
    model, rep = fit_tt(train, 2, FitOptions(seed=1))
    if rep.residuals[-1] < 1e-10:
        np.testing.assert_allclose(tt_to_dense(model).values, tt_to_dense(truth).values, atol=1e-7)
