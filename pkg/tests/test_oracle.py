import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtri
from scipy.stats import norm

from senscal.core import SensitivityLevel, check_loss
from senscal.oracle import (
    OracleError,
    PrimalBoundProblem,
    certify_duality,
    dual_bound_value,
    normal_expected_check_loss,
    population_bound_oracle,
    population_quantile_coefficients,
    primal_problem_from_sample,
    sharp_quantile_fn,
    solve_primal_bound,
)
from senscal.simulation import Population
from conftest import toy_sample


class TestPrimalBound:
    def test_unit_level_collapses_to_ipw(self):
        data = toy_sample(seed=5, n=40, p=2)
        rng = np.random.default_rng(5)
        w = np.exp(rng.normal(size=data.n) * 0.4)
        lvl = SensitivityLevel(1.0)
        value, _ = solve_primal_bound(primal_problem_from_sample(data, w, lvl, 0.0))
        t = data.t
        ipw = float(np.mean(t * data.y * (1 + np.where(t == 1, w, 0))))
        assert value == pytest.approx(ipw, abs=1e-12)

    def test_four_point_hand_instance(self):
        # intercept-only moments: one budget constraint; the optimum fills
        # multipliers greedily by outcome value (fractional-knapsack form)
        y = np.array([3.0, 1.0, -1.0, 2.0])
        w = np.array([1.0, 2.0, 1.0, 1.5])
        lam = 2.0
        lvl = SensitivityLevel(lam)
        h = np.ones((4, 1))
        problem = PrimalBoundProblem(w, y, h, n_total=4, level=lvl)
        value, _ = solve_primal_bound(problem)

        budget = w.sum()  # sum of w_i * lam_i must equal this
        order = np.argsort(-y)
        mult = np.full(4, 1 / lam)
        remaining = budget - (w / lam).sum()
        for i in order:
            room = w[i] * (lam - 1 / lam)
            take = min(remaining, room)
            mult[i] += take / w[i]
            remaining -= take
        assert remaining == pytest.approx(0.0, abs=1e-12)
        expected = (y.sum() + (w * mult * y).sum()) / 4
        assert value == pytest.approx(expected, abs=1e-10)

    def test_duality_random_instances(self):
        res = certify_duality(n_instances=40, n_max=40, seed=3)
        assert res["passed"], res["failures"]
        assert res["worst_gap"] <= 1e-6

    def test_relaxed_dominates_exact_and_monotone_in_slack(self):
        data = toy_sample(seed=6, n=50, p=3)
        rng = np.random.default_rng(6)
        w = np.exp(rng.normal(size=data.n) * 0.4)
        lvl = SensitivityLevel(1.5)
        values = []
        for lam_beta in (0.0, 0.02, 0.1, 0.5):
            value, _ = solve_primal_bound(
                primal_problem_from_sample(data, w, lvl, lam_beta))
            values.append(value)
        assert np.all(np.diff(values) >= -1e-10)

    def test_injected_weight_perturbation_breaks_duality(self):
        # deliberate fault: the two routes must disagree when the weights
        # on one side are perturbed
        data = toy_sample(seed=7, n=45, p=3)
        rng = np.random.default_rng(7)
        w = np.exp(rng.normal(size=data.n) * 0.4)
        lvl = SensitivityLevel(1.5)
        primal, _ = solve_primal_bound(primal_problem_from_sample(data, w, lvl, 0.05))
        w_bad = w * (1.0 + 0.05 * rng.random(data.n))
        dual_bad = dual_bound_value(data, w_bad, lvl, 0.05)
        assert abs(primal - dual_bad) > 1e-6

    def test_multipliers_returned_per_moment(self):
        data = toy_sample(seed=8, n=30, p=2)
        w = np.ones(data.n)
        lvl = SensitivityLevel(1.3)
        value, mult = solve_primal_bound(primal_problem_from_sample(data, w, lvl, 0.0))
        assert mult.shape == (data.h.shape[1],)

    def test_rejects_negative_weights(self):
        lvl = SensitivityLevel(1.5)
        with pytest.raises(OracleError):
            PrimalBoundProblem(np.array([-1.0]), np.array([1.0]),
                               np.ones((1, 1)), 2, lvl)


class TestNormalExpectedCheckLoss:
    @pytest.mark.parametrize("tau", [0.3, 0.5, 2 / 3, 0.9])
    @pytest.mark.parametrize("z", [-1.5, 0.0, 0.7, 2.2])
    def test_matches_quadrature(self, tau, z):
        val = normal_expected_check_loss(z, tau)
        ref, _ = quad(lambda e: check_loss(e, z, tau) * norm.pdf(e), -12, 12)
        assert val == pytest.approx(ref, abs=1e-9)

    def test_minimized_at_quantile(self):
        tau = 2 / 3
        z_tau = ndtri(tau)
        grid = np.linspace(-3, 3, 200)
        vals = normal_expected_check_loss(grid, tau)
        assert normal_expected_check_loss(z_tau, tau) <= vals.min() + 1e-9


class TestPopulationOracle:
    def test_unit_level_equals_mean_outcome(self):
        pop = Population("C1", 6)
        lvl = SensitivityLevel(1.0)
        res = population_bound_oracle(pop, lvl, sharp_quantile_fn(pop, lvl, "Upper"),
                                      200_000, seed=1, side="Upper")
        # E[m*] = 0 for mean-zero covariates and a linear outcome mean
        assert abs(res.value) <= 4 * res.mc_se

    def test_degenerate_outcome_point_identifies(self):
        class Degenerate:
            sigma = 0.0

            def draw_x(self, rng, size):
                return rng.normal(size=(size, 2))

            def pi_star(self, X):
                return np.full(X.shape[0], 0.6)

            def m_star(self, X):
                return 1.5 + 0.0 * X[:, 0]

        pop = Degenerate()
        lvl = SensitivityLevel(2.0)
        up = population_bound_oracle(pop, lvl, lambda X: pop.m_star(X), 50_000,
                                     seed=2, side="Upper")
        lo = population_bound_oracle(pop, lvl, lambda X: pop.m_star(X), 50_000,
                                     seed=2, side="Lower")
        assert up.value == pytest.approx(1.5, abs=1e-12)
        assert lo.value == pytest.approx(1.5, abs=1e-12)

    def test_closed_form_sharp_bound_c1(self):
        # with the true quantile the per-covariate expected check loss is
        # the normal density at the tau-quantile, so the sharp upper bound
        # is E[m*] + span * pdf(z_tau) * E[1 - pi*]
        pop = Population("C1", 8)
        lvl = SensitivityLevel(1.5)
        res = population_bound_oracle(pop, lvl, sharp_quantile_fn(pop, lvl, "Upper"),
                                      400_000, seed=3, side="Upper")
        rng = np.random.Generator(np.random.Philox(key=np.uint64(99)))
        X = pop.draw_x(rng, 400_000)
        z_tau = ndtri(lvl.tau)
        closed = (pop.m_star(X).mean()
                  + lvl.span * norm.pdf(z_tau) * (1 - pop.pi_star(X)).mean())
        assert abs(res.value - closed) <= 4 * np.hypot(res.mc_se, res.mc_se)

    def test_low_precision_flagged(self):
        pop = Population("C1", 4)
        lvl = SensitivityLevel(1.2)
        res = population_bound_oracle(pop, lvl, sharp_quantile_fn(pop, lvl, "Upper"),
                                      5_000, seed=4, side="Upper")
        assert res.low_precision

    def test_population_quantile_recovers_truth_on_c1(self):
        # correctly specified linear quantile model: the population weighted
        # fit equals the true mean slopes with the quantile shift on the
        # intercept
        pop = Population("C1", 5)
        lvl = SensitivityLevel(1.5)
        coefs = population_quantile_coefficients(pop, lvl, weighted=True,
                                                 n_mc=150_000, seed=5)
        z_tau = ndtri(lvl.tau)
        truth = np.array([z_tau, 1.0, 0.5, 0.25, 0.125, 0.0])
        assert np.allclose(coefs, truth, atol=0.05)

    def test_weighted_bound_tighter_than_unweighted_on_c2(self):
        # misspecified quantile model: the weighted population coefficients
        # give a no-worse upper bound than the unweighted ones
        pop = Population("C2", 4)
        lvl = SensitivityLevel(1.5)
        n_mc = 300_000
        bw = population_quantile_coefficients(pop, lvl, weighted=True,
                                              n_mc=n_mc, seed=6)
        bu = population_quantile_coefficients(pop, lvl, weighted=False,
                                              n_mc=n_mc, seed=6)

        def lin_q(b):
            return lambda X: np.hstack([np.ones((X.shape[0], 1)), X]) @ b

        up_w = population_bound_oracle(pop, lvl, lin_q(bw), n_mc, seed=7, side="Upper")
        up_u = population_bound_oracle(pop, lvl, lin_q(bu), n_mc, seed=7, side="Upper")
        sharp = population_bound_oracle(pop, lvl, sharp_quantile_fn(pop, lvl, "Upper"),
                                        n_mc, seed=7, side="Upper")
        tol = 4 * np.hypot(up_w.mc_se, up_u.mc_se)
        assert sharp.value <= up_w.value + tol
        assert up_w.value <= up_u.value + tol
