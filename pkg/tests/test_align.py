from __future__ import annotations

import math

import numpy as np
import pytest

from stcp.align import (
    AlignmentConfig,
    LambdaSelectionConfig,
    align,
    alignment_gradient,
    alignment_objective,
    grid_targets,
    lambda_table_csv,
    level_grid,
    select_lambda,
    stcp_quantile,
)
from stcp.calib import AlphaLevels, conformal_quantile, dp_quantile, empirical_quantile, mixture_cdf_quantile
from stcp.exceptions import InfeasibleAll, InvalidAlpha
from stcp.predictors import CondCdfParams, softplus_inv, with_warp


def make_instance(seed, n=30, m=200, d=2, shift=0.3):
    """Source model, target scores and unlabeled covariates with a mild
    mismatch between the model and the target score law."""
    rng = np.random.default_rng(seed)
    th = CondCdfParams(rng.normal(size=d) * 0.5, 0.0, rng.normal(size=d) * 0.2, float(softplus_inv(1.0)))
    xt = rng.normal(size=(n, d))
    xu = rng.normal(size=(m, d))
    s = th.loc(xt) + shift + 1.2 * th.scale(xt) * rng.normal(size=n)
    return th, s, xu


def warped(th, rng, n_knots=6, scale=0.05):
    th = with_warp(th, np.sort(rng.normal(size=n_knots) * 1.5))
    shifts = np.cumsum(rng.normal(scale=scale, size=n_knots))
    return th.from_vector(np.append(th.to_vector()[:th.n_gaussian], shifts))


class TestLevelGrid:
    def test_two_levels(self):
        np.testing.assert_allclose(level_grid(0.5, 2), [0.25, 0.5, 0.75])

    @pytest.mark.parametrize("alpha_n", [0.01, 0.07, 0.1, 0.33, 0.5, 0.9])
    def test_contains_target(self, alpha_n):
        for K in (2, 5, 21):
            u = level_grid(alpha_n, K)
            assert np.any(u == 1.0 - alpha_n)
            assert np.all(np.diff(u) > 0) and u.min() > 0 and u.max() < 1

    def test_small_sample_target(self):
        lv = AlphaLevels(0.1, 30)
        u = level_grid(lv.alpha_n, 21)
        assert lv.target_level in u
        assert lv.target_level == pytest.approx(0.93, abs=1e-15)

    @pytest.mark.parametrize("alpha_n", [0.0, -0.2, 1.0])
    def test_invalid(self, alpha_n):
        with pytest.raises(InvalidAlpha):
            level_grid(alpha_n, 5)

    def test_grid_targets_keeps_target_rank(self):
        s = np.random.default_rng(0).normal(size=30)
        lv = AlphaLevels(0.1, 30)
        u, q0 = grid_targets(s, lv, 21)
        assert q0[np.argmin(np.abs(u - lv.target_level))] == conformal_quantile(s, 0.1)
        assert len(set(q0.tolist())) == q0.size


class TestObjective:
    def test_penalty_zero_at_start(self):
        th, s, xu = make_instance(1)
        lv = AlphaLevels(0.1, 30)
        u, q0 = grid_targets(s, lv, 21)
        q1 = mixture_cdf_quantile(th, u, xu)
        assert alignment_objective(th, th, u, q0, xu, 5.0) == pytest.approx(np.mean((q0 - q1) ** 2), abs=1e-15)

    def test_grid_term_zero(self):
        rng = np.random.default_rng(2)
        th, _, xu = make_instance(2)
        other = th.from_vector(th.to_vector() + rng.normal(scale=0.1, size=th.k0))
        u = level_grid(0.07, 21)
        q0 = mixture_cdf_quantile(other, u, xu)
        diff = other.to_vector() - th.to_vector()
        assert alignment_objective(other, th, u, q0, xu, 3.0) == pytest.approx(3.0 * diff @ diff / th.k0, rel=1e-14)

    def test_direct_sum_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            th, s, xu = make_instance(int(rng.integers(1e6)))
            tilde = th.from_vector(th.to_vector() + rng.normal(scale=0.2, size=th.k0))
            u, q0 = grid_targets(s, AlphaLevels(0.1, 30), 21)
            lam = float(rng.uniform(0, 10))
            q1 = mixture_cdf_quantile(tilde, u, xu)
            grid_term = sum((a - b) ** 2 for a, b in zip(q0, q1)) / len(u)
            pen = sum((a - b) ** 2 for a, b in zip(tilde.to_vector(), th.to_vector())) / th.k0
            assert abs(alignment_objective(tilde, th, u, q0, xu, lam) - (grid_term + lam * pen)) <= 1e-12


def _fd(theta, theta_hat, u, q0, xu, lam, h=1e-5):
    vec = theta.to_vector()
    out = np.empty(vec.size)
    for i in range(vec.size):
        e = np.zeros(vec.size)
        e[i] = h
        out[i] = (alignment_objective(theta.from_vector(vec + e), theta_hat, u, q0, xu, lam, tol=1e-14)
                  - alignment_objective(theta.from_vector(vec - e), theta_hat, u, q0, xu, lam, tol=1e-14)) / (2 * h)
    return out


def gradient_instance(rng, with_knots):
    th, s, xu = make_instance(int(rng.integers(1e9)), m=50)
    if with_knots:
        th = warped(th, rng)
    tilde = th.from_vector(th.to_vector() + rng.normal(scale=0.1, size=th.k0))
    if with_knots and not tilde.warp_is_monotone():
        tilde = th
    u, q0 = grid_targets(s, AlphaLevels(0.1, 30), 11)
    return tilde, th, u, q0, xu, float(rng.uniform(0, 5))


def gradient_rel_error(args):
    g = alignment_gradient(*args, tol=1e-14)
    fd = _fd(*args)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)


class TestGradient:
    def test_stationary_at_exact_fit(self):
        th, _, xu = make_instance(4)
        u = level_grid(0.07, 21)
        q0 = mixture_cdf_quantile(th, u, xu)
        assert np.linalg.norm(alignment_gradient(th, th, u, q0, xu, 7.0)) <= 1e-10

    def test_pure_penalty(self):
        rng = np.random.default_rng(5)
        th, _, xu = make_instance(5)
        other = th.from_vector(th.to_vector() + rng.normal(scale=0.1, size=th.k0))
        u = level_grid(0.07, 21)
        q0 = mixture_cdf_quantile(other, u, xu)
        g = alignment_gradient(other, th, u, q0, xu, 2.5)
        np.testing.assert_array_equal(g, 2 * 2.5 / th.k0 * (other.to_vector() - th.to_vector()))

    @pytest.mark.parametrize("with_knots", [False, True])
    def test_finite_differences(self, with_knots):
        rng = np.random.default_rng(6 + with_knots)
        worst = max(gradient_rel_error(gradient_instance(rng, with_knots)) for _ in range(15))
        assert worst <= 1e-4

    def test_frozen_entries_are_zero(self):
        rng = np.random.default_rng(8)
        args = gradient_instance(rng, True)
        g = alignment_gradient(*args, tune="warp")
        assert np.all(g[: args[0].n_gaussian] == 0)
        g = alignment_gradient(*args, tune="gaussian")
        assert np.all(g[args[0].n_gaussian:] == 0)


class TestAlign:
    def test_huge_lambda_stays_at_start(self):
        th, s, xu = make_instance(9)
        lv = AlphaLevels(0.1, 30)
        res = align(th, 1e9, s, xu, lv)
        np.testing.assert_allclose(res.theta.to_vector()[: th.k0], th.to_vector(), atol=0)
        assert np.linalg.norm(res.theta.warp_shifts) <= 1e-6
        assert stcp_quantile(res.theta, lv, xu) == pytest.approx(dp_quantile(th, lv, xu), abs=1e-6)

    def test_lambda_zero_recovers_conformal_quantile(self):
        for seed in range(10):
            th, s, xu = make_instance(100 + seed)
            lv = AlphaLevels(0.1, 30)
            res = align(th, 0.0, s, xu, lv)
            assert res.converged
            assert res.grid_residual <= 1e-6
            assert abs(stcp_quantile(res.theta, lv, xu) - conformal_quantile(s, 0.1)) <= 1e-3

    def test_exact_fit_instance(self):
        th, _, xu = make_instance(10)
        truth = th.shifted(0.4)
        lv = AlphaLevels(0.1, 30)
        s = mixture_cdf_quantile(truth, (np.arange(1, 31) - 0.5) / 30, xu)
        res = align(th, 0.0, s, xu, lv)
        assert res.grid_residual <= 1e-6

    def test_objective_nonincreasing(self):
        th, s, xu = make_instance(11)
        for tune in ("warp", "gaussian", "all"):
            res = align(th, 1.0, s, xu, AlphaLevels(0.1, 30), AlignmentConfig(lam=1.0, tune=tune, max_iters=200))
            h = np.array(res.history)
            assert np.all(np.diff(h) <= 0)
            assert res.objective <= h[0]

    def test_gaussian_mode_reduces_misfit(self):
        th, s, xu = make_instance(12, shift=1.0)
        lv = AlphaLevels(0.1, 30)
        res = align(th, 0.0, s, xu, lv, AlignmentConfig(tune="gaussian", max_iters=300))
        u, q0 = grid_targets(s, lv, 21)
        start = np.mean((q0 - mixture_cdf_quantile(th, u, xu)) ** 2)
        assert res.grid_residual < 0.5 * start
        assert res.theta.warp_knots.size == 0

    def test_shrinks_towards_plug_in(self):
        th, s, xu = make_instance(13, shift=0.8)
        lv = AlphaLevels(0.1, 30)
        base, dp = conformal_quantile(s, 0.1), dp_quantile(th, lv, xu)
        qs = [stcp_quantile(align(th, lam, s, xu, lv).theta, lv, xu) for lam in (0.0, 1.0, 10.0, 100.0)]
        dist = np.abs(np.array(qs) - dp)
        assert np.all(np.diff(dist) < 0)
        assert abs(qs[0] - base) <= 1e-3

    def test_alpha_monotone(self):
        th, s, xu = make_instance(14)
        res = align(th, 1.0, s, xu, AlphaLevels(0.1, 30))
        assert stcp_quantile(res.theta, AlphaLevels(0.2, 30), xu) <= stcp_quantile(res.theta, AlphaLevels(0.05, 30), xu)

    def test_infinite_levels(self):
        th, s, xu = make_instance(15, n=5)
        lv = AlphaLevels(0.1, 5)
        assert stcp_quantile(th, lv, xu) == math.inf
        with pytest.raises(InvalidAlpha):
            align(th, 0.0, s, xu, lv)

    def test_translation_equivariance(self):
        th, s, xu = make_instance(16)
        lv = AlphaLevels(0.1, 30)
        c = 2.75
        q = stcp_quantile(align(th, 1.0, s, xu, lv).theta, lv, xu)
        q_c = stcp_quantile(align(th.shifted(c), 1.0, s + c, xu, lv).theta, lv, xu)
        assert q_c == pytest.approx(q + c, abs=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AlignmentConfig(lam=-1.0)
        with pytest.raises(ValueError):
            AlignmentConfig(grid_size=1)
        with pytest.raises(ValueError):
            AlignmentConfig(tune="bogus")


class TestSelectLambda:
    def test_all_feasible_picks_max(self):
        # a model that already matches the target keeps every lambda in the band
        th, _, xu = make_instance(17)
        rng = np.random.default_rng(17)
        xt = rng.normal(size=(200, 2))
        s = th.loc(xt) + th.scale(xt) * rng.normal(size=200)
        sel = select_lambda(th, LambdaSelectionConfig((0.0, 1.0, 10.0), alpha_tol=0.05),
                            AlphaLevels(0.1, 200), s, xu)
        assert all(row["feasible"] for row in sel.table)
        assert sel.lambda_hat == 10.0

    def test_large_shift_picks_zero(self):
        th, s, xu = make_instance(18)
        sel = select_lambda(th.shifted(10.0), LambdaSelectionConfig((0.0, 1e6)), AlphaLevels(0.1, 30), s, xu)
        assert sel.lambda_hat == 0.0
        assert not sel.table[1]["feasible"] and sel.table[1]["q_st"] > sel.q_upper

    def test_selected_in_band(self):
        for seed in range(10):
            th, s, xu = make_instance(200 + seed, shift=0.5 * seed / 10)
            sel = select_lambda(th, LambdaSelectionConfig(), AlphaLevels(0.1, 30), s, xu)
            assert sel.table[0]["feasible"]
            assert sel.q_lower - 1e-6 <= sel.q_sel <= sel.q_upper + 1e-6
            assert sel.q_lower == empirical_quantile(s, 0.88)
            assert sel.q_upper == empirical_quantile(s, 0.92)

    def test_upper_level_above_one(self):
        th, s, xu = make_instance(19)
        sel = select_lambda(th, LambdaSelectionConfig(alpha_tol=0.06), AlphaLevels(0.05, 30), s, xu)
        assert sel.q_upper == s.max()

    def test_infeasible_at_zero(self):
        # with n = 25 the conformal rank (24) sits above the rank of the
        # upper band edge (23), so lambda = 0 cannot be feasible
        th, s, xu = make_instance(20, n=25)
        with pytest.raises(InfeasibleAll):
            select_lambda(th, LambdaSelectionConfig(), AlphaLevels(0.1, 25), s, xu)

    def test_warm_start_flag(self):
        th, s, xu = make_instance(21)
        lv = AlphaLevels(0.1, 30)
        cold = select_lambda(th, LambdaSelectionConfig(), lv, s, xu)
        warm = select_lambda(th, LambdaSelectionConfig(), lv, s, xu, AlignmentConfig(warm_start=True))
        for a, b in zip(cold.table, warm.table):
            assert a["q_st"] == pytest.approx(b["q_st"], abs=1e-6)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            LambdaSelectionConfig((1.0, 2.0))
        with pytest.raises(ValueError):
            LambdaSelectionConfig((0.0, 2.0, 1.0))

    def test_csv(self):
        th, s, xu = make_instance(22)
        text = lambda_table_csv(select_lambda(th, LambdaSelectionConfig((0.0, 1.0)), AlphaLevels(0.1, 30), s, xu))
        lines = text.split("\n")
        assert lines[0] == "lambda,q_st,feasible,grid_residual,iters"
        assert len(lines) == 4 and lines[-1] == ""
        assert lines[1].startswith("0.0,") and lines[1].split(",")[2] == "true"
