"""Certification suite behind the ``verify`` command.

Every check is an end-to-end consistency statement with an independent
second route: linear-programming duality gaps, the stationarity identities
of the calibrated fits, zero thresholds actually zeroing coefficients,
population bound orderings from the Monte Carlo oracle, and exact
monotonicity of the relaxed sample bound along the quantile-penalty path.
"""

from __future__ import annotations

import numpy as np

from . import bounds as bounds_mod
from .core import SensitivityLevel, clamped_linear_predictor
from .oracle import (
    certify_duality,
    dual_bound_value,
    population_bound_oracle,
    population_quantile_coefficients,
    sharp_quantile_fn,
)
from .pipeline import (
    LOSS_ALPHA_WLS,
    LOSS_BETA_WQR,
    LOSS_GAMMA_CAL,
    LOSS_GAMMA_ML,
    compute_lambda_star,
    fit_levels,
)
from .simulation import DgpSpec, Population, generate
from .solvers import (
    SolverSettings,
    fit_ml_gamma,
    fit_rcal_gamma,
    fit_wls_lasso,
    fit_wqr_lasso,
)


def _check_duality(instances, n_max, seed):
    res = certify_duality(n_instances=instances, n_max=n_max, seed=seed)
    return {
        "name": "lp_duality",
        "passed": res["passed"],
        "detail": f"{res['instances']} instances, worst gap {res['worst_gap']:.2e}",
    }


def _check_kkt(seed):
    worst_norm = 0.0
    worst_box = -np.inf
    worst_imput = 0.0
    level = SensitivityLevel(1.5)
    for rep in range(5):
        data = generate(DgpSpec("C1", 300, 8, seed + rep))
        fits = fit_levels(data, [level], "RCAL",
                          lambdas={"gamma": 0.02, "beta": 0.02, "alpha": 0.02})
        fit = fits[level.lam]
        f_std, _ = fit.designs_for(data)
        lin, _ = clamped_linear_predictor(f_std @ fit.gamma.values)
        inv_pi = 1.0 + np.exp(-lin)
        worst_norm = max(worst_norm, abs(float(np.mean(data.t * inv_pi)) - 1.0))
        box = np.abs((data.t * inv_pi) @ f_std / data.n - f_std.mean(axis=0))
        worst_box = max(worst_box, float(box[1:].max()) - fit.lambda_gamma)
        up = bounds_mod.point_bound(data, fit, level, "Upper")
        eta = bounds_mod.eta_values(data, fit, level, "Upper")
        imput = float(np.mean(data.t * data.y + (1.0 - data.t) * eta))
        worst_imput = max(worst_imput, abs(up - imput))
    passed = worst_norm <= 1e-6 and worst_box <= 1e-6 and worst_imput <= 1e-8
    return {
        "name": "kkt_identities",
        "passed": passed,
        "detail": (f"norm {worst_norm:.2e}, box excess {worst_box:.2e}, "
                   f"imputation {worst_imput:.2e}"),
    }


def _check_lambda_star(seed):
    data = generate(DgpSpec("C1", 250, 6, seed))
    settings = SolverSettings()
    level = SensitivityLevel(1.5)
    gamma, _ = fit_rcal_gamma(data, 0.05, settings)
    lin, _ = clamped_linear_predictor(data.f @ gamma.values)
    weights = np.exp(-lin)
    response = data.y + level.span * np.zeros(data.n)  # placeholder response
    checks = []
    lam = 1.01 * compute_lambda_star(LOSS_GAMMA_CAL, data)
    coef, _ = fit_rcal_gamma(data, lam, settings)
    checks.append(float(np.abs(coef.values[1:]).max(initial=0.0)))
    lam = 1.01 * compute_lambda_star(LOSS_GAMMA_ML, data)
    coef, _ = fit_ml_gamma(data, lam, settings)
    checks.append(float(np.abs(coef.values[1:]).max(initial=0.0)))
    ctx = {"weights": weights, "tau": level.tau}
    lam = 1.01 * compute_lambda_star(LOSS_BETA_WQR, data, ctx)
    coef, _ = fit_wqr_lasso(data, weights, level.tau, lam, settings)
    checks.append(float(np.abs(coef.values[1:]).max(initial=0.0)))
    ctx = {"weights": weights, "response": response}
    lam = 1.01 * compute_lambda_star(LOSS_ALPHA_WLS, data, ctx)
    coef, _ = fit_wls_lasso(data, weights, response, lam, settings)
    checks.append(float(np.abs(coef.values[1:]).max(initial=0.0)))
    worst = max(checks)
    return {
        "name": "zero_threshold",
        "passed": worst <= 1e-7,
        "detail": f"max |slope| at 1.01*lambda_star = {worst:.2e}",
    }


def _check_population_ordering(seed, n_mc=200_000, n_se=4.0):
    pop = Population("C2", 4)  # linear quantile model misspecified
    failures = []
    uppers = {}
    for lam in (1.2, 1.5, 2.0):
        level = SensitivityLevel(lam)
        sharp_up = population_bound_oracle(pop, level, sharp_quantile_fn(pop, level, "Upper"),
                                           n_mc, seed, side="Upper")
        sharp_lo = population_bound_oracle(pop, level, sharp_quantile_fn(pop, level, "Lower"),
                                           n_mc, seed, side="Lower")
        bw = population_quantile_coefficients(pop, level, True, n_mc, seed + 1)
        bu = population_quantile_coefficients(pop, level, False, n_mc, seed + 1)
        bw_lo = population_quantile_coefficients(pop, level, True, n_mc, seed + 1, side="Lower")

        def lin_q(b):
            return lambda X: np.hstack([np.ones((X.shape[0], 1)), X]) @ b

        up_w = population_bound_oracle(pop, level, lin_q(bw), n_mc, seed, side="Upper")
        up_u = population_bound_oracle(pop, level, lin_q(bu), n_mc, seed, side="Upper")
        lo_w = population_bound_oracle(pop, level, lin_q(bw_lo), n_mc, seed, side="Lower")
        uppers[lam] = sharp_up

        def tol(a, b):
            return n_se * float(np.hypot(a.mc_se, b.mc_se))

        if not sharp_up.value <= up_w.value + tol(sharp_up, up_w):
            failures.append(f"sharp<=relaxed upper at {lam}")
        if not lo_w.value <= sharp_lo.value + tol(lo_w, sharp_lo):
            failures.append(f"relaxed<=sharp lower at {lam}")
        if not up_w.value <= up_u.value + tol(up_w, up_u):
            failures.append(f"weighted<=unweighted upper at {lam}")
    lams = sorted(uppers)
    for a, b in zip(lams, lams[1:]):
        gap = n_se * float(np.hypot(uppers[a].mc_se, uppers[b].mc_se))
        if not uppers[a].value <= uppers[b].value + gap:
            failures.append(f"upper({a}) <= upper({b})")
    return {
        "name": "population_ordering",
        "passed": not failures,
        "detail": "all orderings hold" if not failures else "; ".join(failures),
    }


def _check_relaxation_monotonic(seed, n_samples=5):
    worst_drop = 0.0
    for rep in range(n_samples):
        data = generate(DgpSpec("C1", 150, 5, seed + rep))
        level = SensitivityLevel(1.5)
        gamma, _ = fit_rcal_gamma(data, 0.05)
        lin, _ = clamped_linear_predictor(data.f @ gamma.values)
        weights = np.exp(-lin)
        lam_star = compute_lambda_star(LOSS_BETA_WQR, data,
                                       {"weights": weights, "tau": level.tau})
        values = [dual_bound_value(data, weights, level, lam)
                  for lam in np.linspace(0.0, 1.1 * lam_star, 9)]
        drops = -np.diff(values)
        worst_drop = max(worst_drop, float(drops.max(initial=0.0)))
    return {
        "name": "relaxation_monotonic",
        "passed": worst_drop <= 1e-10,
        "detail": f"worst decrease along penalty path {worst_drop:.2e}",
    }


def run_verification_suite(instances: int = 200, n_max: int = 60, seed: int = 0):
    return [
        _check_duality(instances, n_max, seed),
        _check_kkt(seed + 1000),
        _check_lambda_star(seed + 2000),
        _check_population_ordering(seed + 3000),
        _check_relaxation_monotonic(seed + 4000),
    ]
