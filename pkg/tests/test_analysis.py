import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbm_sde.analysis import (
    c0_sequence,
    constants_for,
    exact_weighted_interp_error,
    k1_kernel,
    k2_constant,
    lower_bound_constant,
    malliavin_derivative,
    mean_square_weight_integral,
    nd_condition_estimate,
    odd_reciprocal_series,
    predicted_asymptotic_error,
    simulate_weights,
    theta_cross_cov,
    weight_path,
    weight_path_stochastic,
    zeta_negative,
    zeta_real,
)
from fbm_sde.fbm_engine import sample_paths
from fbm_sde.model import Degeneracy, degeneracy_check
from fbm_sde.schemes import wong_zakai_solve

from conftest import CORPUS, make_problem
from oracles import c0_mpmath, interp_error_variance_on_grid, k1_mpmath, theta_by_covariance, zeta_eta

E = math.e


def rho_exp(t):
    return np.exp(1.0 - np.asarray(t, dtype=float))


def trajectories(p, paths=20, n=1024, seed=0):
    values = sample_paths(n, p.hurst, seed, range(paths))
    return values, wong_zakai_solve(p, values, 8, trajectory=True).trajectory


class TestWeightPath:
    def test_degenerate_is_zero(self, degenerate):
        values, traj = trajectories(degenerate)
        y = weight_path(degenerate, values, traj).y_values
        assert np.all(y == 0.0)

    def test_langevin_closed_form(self, langevin):
        values, traj = trajectories(langevin)
        y = weight_path(langevin, values, traj).y_values
        t = np.arange(1025) / 1024
        np.testing.assert_allclose(y, np.broadcast_to(np.exp(1 - t), y.shape), rtol=1e-13)

    def test_two_forms_agree(self, non_degenerate):
        values, traj = trajectories(non_degenerate, paths=30, n=4096)
        y1 = weight_path(non_degenerate, values, traj).y_values
        y2 = weight_path_stochastic(non_degenerate, values, traj).y_values
        assert math.sqrt(np.mean((y1 - y2) ** 2)) <= 1e-3

    def test_grid_mismatch(self, langevin):
        with pytest.raises(ValueError):
            weight_path(langevin, np.zeros(5), np.zeros(9))

    def test_holder_exponent(self, non_degenerate):
        y = simulate_weights(non_degenerate, 200, 1024, seed=3)
        lags = 2 ** np.arange(0, 7)
        ms = [np.mean((y[:, lag:] - y[:, :-lag]) ** 2) for lag in lags]
        slope = np.polyfit(np.log(lags / 1024), np.log(ms), 1)[0]
        assert slope >= 2 * non_degenerate.hurst - 0.2


class TestWeightFunctionals:
    def test_langevin_mean_square(self, langevin):
        value, se = mean_square_weight_integral(langevin, 10, 4096)
        assert value == pytest.approx((E**2 - 1) / 2, rel=1e-6)
        assert value == pytest.approx(3.19453, abs=1e-5)
        assert se <= 1e-12

    def test_langevin_nd(self, langevin):
        value, se = nd_condition_estimate(langevin, 10, 4096)
        assert value == pytest.approx(E - 1, rel=1e-7)
        assert se <= 1e-12

    def test_degenerate_zero(self, degenerate):
        assert tuple(mean_square_weight_integral(degenerate, 10, 256)) == (0.0, 0.0)
        assert tuple(nd_condition_estimate(degenerate, 10, 256)) == (0.0, 0.0)
        assert predicted_asymptotic_error(degenerate, 10, 256) == 0.0

    def test_zero_iff_degenerate(self, corpus_problem):
        value, _ = mean_square_weight_integral(corpus_problem, 50, 512)
        is_deg = degeneracy_check(corpus_problem) is Degeneracy.DEGENERATE
        assert (value == 0.0) == is_deg

    def test_nd_holds_statistically(self, non_degenerate):
        value, se = nd_condition_estimate(non_degenerate, 300, 512)
        assert value > 3 * se

    def test_needs_two_paths(self, langevin):
        with pytest.raises(ValueError):
            mean_square_weight_integral(langevin, 1, 16)

    @pytest.mark.parametrize("h,target", [(0.75, 0.285328), (0.6, 0.4184)])
    def test_predicted_langevin(self, h, target):
        p = make_problem("langevin", hurst=h)
        val = predicted_asymptotic_error(p, 4, 4096)
        beta = math.sqrt(abs(zeta_eta(-2 * h)))
        assert val == pytest.approx(beta * math.sqrt((E**2 - 1) / 2), rel=1e-7)
        assert val == pytest.approx(target, abs=5e-5 if h == 0.6 else 5e-6)


class TestMalliavin:
    def test_indicator_and_diagonal(self, non_degenerate):
        _, traj = trajectories(non_degenerate, paths=1, n=256)
        assert malliavin_derivative(non_degenerate, traj[0], 0.7, 0.3) == 0.0
        x = traj[0][128]
        assert malliavin_derivative(non_degenerate, traj[0], 0.5, 0.5) == pytest.approx(2 + math.sin(x))

    @pytest.mark.parametrize("s,t", [(0.0, 1.0), (0.25, 0.75), (0.5, 0.5)])
    def test_langevin(self, langevin, s, t):
        _, traj = trajectories(langevin, paths=1, n=256)
        assert malliavin_derivative(langevin, traj[0], s, t) == pytest.approx(math.exp(t - s), rel=1e-12)

    def test_path_perturbation(self, non_degenerate):
        # shifting the driver by eps on [s, 1] perturbs X_1 by eps D_s X_1
        p = non_degenerate
        values, traj = trajectories(p, paths=3, n=2048, seed=5)
        k, eps = 512, 1e-6
        bump = np.zeros(values.shape[1])
        bump[k:] = eps
        up = wong_zakai_solve(p, values + bump, 8).terminal
        down = wong_zakai_solve(p, values - bump, 8).terminal
        fd = (up - down) / (2 * eps)
        for r in range(3):
            assert malliavin_derivative(p, traj[r], k / 2048, 1.0) == pytest.approx(fd[r], rel=1e-3)

    def test_domain(self, langevin):
        with pytest.raises(ValueError):
            malliavin_derivative(langevin, np.zeros(5), -0.1, 0.5)


class TestZeta:
    @pytest.mark.parametrize("s", np.round(np.arange(-1.9, -0.05, 0.1), 10))
    def test_against_eta_series(self, s):
        assert zeta_negative(s) == pytest.approx(zeta_eta(s), abs=1e-10)

    def test_bernoulli_value(self):
        assert abs(zeta_negative(-1.0) + 1 / 12) <= 1e-12

    def test_reference_values(self):
        assert zeta_negative(-1.5) == pytest.approx(-0.02548520189, abs=1e-11)
        assert zeta_negative(-1.2) == pytest.approx(-0.0548, abs=1e-4)
        assert zeta_negative(-1.2) == pytest.approx(zeta_eta(-1.2), abs=1e-10)

    @pytest.mark.parametrize("s", [1.05, 1.5, 2.0, 2.2, 2.9, 5.0])
    def test_zeta_real(self, s):
        assert zeta_real(s) == pytest.approx(float(mpmath.zeta(s)), rel=1e-13)

    @pytest.mark.parametrize("s", [0.0, -2.0, 0.5, -3.0])
    def test_domain(self, s):
        with pytest.raises(ValueError):
            zeta_negative(s)


class TestConstants:
    def test_three_quarters(self):
        c = constants_for(0.75)
        assert c.kappa == 0.375
        assert c.beta == pytest.approx(0.159641, abs=1e-6)
        assert c.k2 == pytest.approx(0.4 - 0.11428571 - 0.25, abs=1e-8)
        assert c.k2 == pytest.approx(0.0357143, abs=1e-7)

    @given(st.floats(0.501, 0.999))
    def test_invariants(self, h):
        c = constants_for(h)
        assert c.beta**2 == pytest.approx(abs(c.zeta_neg2H), rel=1e-14)
        assert 0 < c.kappa < 1
        assert c.k2 == k2_constant(h)

    def test_half_is_brownian_constant(self):
        # at H = 1/2 the optimal constant is 1/sqrt(12)
        assert math.sqrt(abs(zeta_negative(-1.0))) == pytest.approx(1 / math.sqrt(12), abs=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            constants_for(0.5)


class TestLowerBound:
    @pytest.mark.parametrize("h", [0.55, 0.75, 0.9])
    def test_series_against_direct_sum(self, h):
        mpmath.mp.dps = 25
        ref = mpmath.nsum(lambda j: (2 * j + 1) ** (-(2 * h + 1)), [1, mpmath.inf], method="euler-maclaurin")
        assert odd_reciprocal_series(h) == pytest.approx(float(ref), abs=1e-12)

    def test_value_three_quarters(self):
        assert odd_reciprocal_series(0.75) == pytest.approx(0.1043436, abs=1e-7)

    def test_decreasing_in_h(self):
        vals = [odd_reciprocal_series(h) for h in np.linspace(0.55, 0.95, 9)]
        assert np.all(np.diff(vals) < 0)

    def test_scaling(self):
        a = lower_bound_constant(0.75, 1.0)
        assert lower_bound_constant(0.75, 4.0) == pytest.approx(a / 2, rel=1e-14)
        expected = math.sqrt(odd_reciprocal_series(0.75) / (2 * math.pi**3.5))
        assert a == pytest.approx(expected, rel=1e-14)
        with pytest.raises(ValueError):
            lower_bound_constant(0.75, 0.0)


class TestKernelSums:
    @pytest.mark.parametrize("h", [0.55, 0.75, 0.9])
    def test_k_sum_matches_closed_form(self, h):
        k1 = k1_kernel(np.arange(1, 101), h)
        partial = k2_constant(h) + 2 * np.cumsum(k1)
        for r in range(1, 101):
            assert c0_sequence(r, h) == pytest.approx(partial[r - 1], abs=1e-9)

    @pytest.mark.parametrize("h", [0.55, 0.75, 0.9])
    @pytest.mark.parametrize("k", [1, 2, 3, 10, 1000])
    def test_k1_against_high_precision(self, h, k):
        assert k1_kernel(k, h) == pytest.approx(float(k1_mpmath(k, h)), rel=1e-12, abs=1e-16)

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    def test_k1_decay(self, h):
        ks = 2.0 ** np.arange(5, 13)
        slope = np.polyfit(np.log(ks), np.log(np.abs(k1_kernel(ks, h))), 1)[0]
        assert slope == pytest.approx(2 * h - 4, abs=0.01)

    def test_k1_domain(self):
        with pytest.raises(ValueError):
            k1_kernel(0, 0.75)

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    def test_c0_high_precision(self, h):
        for r in (1, 10, 200):
            assert c0_sequence(r, h) == pytest.approx(c0_mpmath(r, h), abs=1e-12)

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    def test_c0_limit(self, h):
        gaps = [abs(c0_sequence(10**k, h) + zeta_negative(-2 * h)) for k in range(1, 5)]
        assert gaps[-1] <= 1e-3
        assert all(b < a for a, b in zip(gaps, gaps[1:]))


class TestTheta:
    def test_diagonal_corner(self):
        n, h = 8, 0.75
        assert theta_cross_cov(3, 3, 3 / n, 3 / n, n, h) == pytest.approx(0.25 * n ** (-1.5), abs=1e-15)

    @settings(max_examples=300)
    @given(st.integers(0, 15), st.integers(0, 15), st.floats(0, 1), st.floats(0, 1), st.floats(0.5, 0.95))
    def test_dual_forms_and_symmetry(self, i, j, u, v, h):
        n = 16
        s1, s2 = (i + u) / n, (j + v) / n
        direct = theta_cross_cov(i, j, s1, s2, n, h)
        assert direct == pytest.approx(theta_by_covariance(i, j, s1, s2, n, h), abs=1e-12)
        assert theta_cross_cov(j, i, s2, s1, n, h) == pytest.approx(direct, abs=1e-15)

    def test_ten_thousand_probes(self):
        rng = np.random.default_rng(0)
        n = 32
        for _ in range(10_000 // 100):
            h = rng.uniform(0.5, 0.95)
            i, j = rng.integers(0, n, 2)
            s1 = (i + rng.uniform(size=100)) / n
            s2 = (j + rng.uniform(size=100)) / n
            a = theta_cross_cov(i, j, s1, s2, n, h)
            b = theta_by_covariance(i, j, s1, s2, n, h)
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_out_of_cell(self):
        with pytest.raises(ValueError):
            theta_cross_cov(0, 0, 0.6, 0.1, 4, 0.7)


class TestExactInterpError:
    def test_zero_weight(self):
        assert exact_weighted_interp_error(lambda t: np.zeros_like(t), 8, 0.75) == 0.0

    def test_brownian_bridge(self):
        v = exact_weighted_interp_error(lambda t: np.ones_like(t), 1, 0.5)
        assert v == pytest.approx(1 / 12, abs=1e-14)

    @pytest.mark.parametrize("h", [0.55, 0.75, 0.95])
    @pytest.mark.parametrize("n", [1, 2, 5, 16, 64])
    def test_quadrature_saturated(self, h, n):
        for q in (8, 10):
            a = exact_weighted_interp_error(rho_exp, n, h, q=q)
            b = exact_weighted_interp_error(rho_exp, n, h, q=q + 2)
            assert abs(a - b) <= 1e-10

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    @pytest.mark.parametrize("n", [1, 4, 16])
    def test_against_fine_grid_covariance(self, h, n):
        exact = exact_weighted_interp_error(rho_exp, n, h)
        # the grid-refined oracle converges like factor^-2
        coarse = interp_error_variance_on_grid(rho_exp, n, 16, h)
        fine = interp_error_variance_on_grid(rho_exp, n, 64, h)
        assert abs(fine - exact) < abs(coarse - exact)
        assert fine == pytest.approx(exact, rel=2e-3)

    def test_midpoint_kernel_for_cellwise_constant_weight(self):
        n, h = 4, 0.75

        def step(t):
            return 1.0 + np.floor(4 * np.asarray(t)) ** 2

        a = exact_weighted_interp_error(step, n, h, kernel="interp")
        b = exact_weighted_interp_error(step, n, h, kernel="midpoint")
        assert a == pytest.approx(b, rel=1e-12)

    def test_unknown_kernel(self):
        with pytest.raises(ValueError):
            exact_weighted_interp_error(rho_exp, 2, 0.75, kernel="spline")

    def test_asymptotic_constant(self):
        h = 0.75
        target = abs(zeta_negative(-1.5)) * (E**2 - 1) / 2
        gaps = {}
        for n in (32, 64, 128, 256):
            gaps[n] = abs(n ** (2 * h + 1) * exact_weighted_interp_error(rho_exp, n, h) / target - 1)
        assert gaps[256] <= 0.05
        assert gaps[256] < gaps[128] < gaps[64] < gaps[32]
