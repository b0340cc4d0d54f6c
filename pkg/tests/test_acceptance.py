"""Acceptance suite.

Each test prints one pass/fail line (visible with ``pytest -s`` or in the
failure report).  The full-scale coverage reproduction is hours of compute
and runs only with ``SENSCAL_ACCEPT_FULL=1``; its always-on fast variant
gates the build with property checks at reduced scale.  Gate size can be
shrunk for development through ``SENSCAL_GATE_REPS``.
"""

import os
import time

import numpy as np
import pytest

from senscal import bounds
from senscal.core import SensitivityLevel, clamped_linear_predictor
from senscal.oracle import (
    certify_duality,
    dual_bound_value,
    population_bound_oracle,
    population_quantile_coefficients,
    sharp_quantile_fn,
)
from senscal.pipeline import (
    LOSS_BETA_WQR,
    TuningGrid,
    compute_lambda_star,
    fit_levels,
)
from senscal.simulation import DgpSpec, Population, generate, run_replications
from senscal.solvers import SolverSettings, fit_rcal_gamma, fit_wls_lasso, fit_wqr_lasso
from conftest import DATA_DIR

ACCEPT_THREADS = int(os.environ.get("SENSCAL_ACCEPT_THREADS", os.cpu_count() or 1))
GATE_REPS = int(os.environ.get("SENSCAL_GATE_REPS", "100"))
FULL = os.environ.get("SENSCAL_ACCEPT_FULL", "") == "1"


def report(number, name, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {number} {name}: {status} — {detail}")
    assert passed, f"criterion {number} ({name}): {detail}"


# ---------------------------------------------------------------------------
# 1. duality certification
# ---------------------------------------------------------------------------

def test_criterion_1_duality_certification():
    start = time.time()
    res = certify_duality(n_instances=200, n_max=60, m_max=5, seed=20240,
                          levels=(1.2, 1.5, 2.0), lambda_betas=(0.0, 0.05, 0.2),
                          tol=1e-6)
    elapsed = time.time() - start
    ok = res["passed"] and elapsed <= 120.0
    report(1, "duality certification", ok,
           f"{res['instances']} instances, worst gap {res['worst_gap']:.2e}, "
           f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. KKT identity suite
# ---------------------------------------------------------------------------

def test_criterion_2_kkt_identities():
    worst_norm = 0.0
    worst_box = -np.inf
    worst_imput = 0.0
    n_fits = 0
    penalties = (0.0, 0.01, 0.02, 0.05, 0.1)
    for seed in range(5):
        data = generate(DgpSpec("C1", 250, 8, 5000 + seed))
        for lam_pen in penalties:
            for lam in (1.5, 2.0):
                level = SensitivityLevel(lam)
                fit = fit_levels(data, [level], "RCAL",
                                 lambdas={"gamma": lam_pen, "beta": lam_pen,
                                          "alpha": lam_pen})[level.lam]
                n_fits += 1
                f_std, _ = fit.designs_for(data)
                lin, _ = clamped_linear_predictor(f_std @ fit.gamma.values)
                inv_pi = 1.0 + np.exp(-lin)
                worst_norm = max(worst_norm,
                                 abs(float(np.mean(data.t * inv_pi)) - 1.0))
                box = np.abs((data.t * inv_pi) @ f_std / data.n - f_std.mean(axis=0))
                worst_box = max(worst_box, float(box[1:].max()) - fit.lambda_gamma)
                for side in ("Upper", "Lower"):
                    point = bounds.point_bound(data, fit, level, side)
                    eta = bounds.eta_values(data, fit, level, side)
                    imput = float(np.mean(data.t * data.y + (1 - data.t) * eta))
                    worst_imput = max(worst_imput, abs(point - imput))
    ok = (n_fits == 50 and worst_norm <= 1e-6 and worst_box <= 1e-6
          and worst_imput <= 1e-8)
    report(2, "KKT identity suite", ok,
           f"{n_fits} fits: normalization {worst_norm:.2e}, "
           f"box excess {worst_box:.2e}, imputation {worst_imput:.2e}")


# ---------------------------------------------------------------------------
# 3. unit-level reduction to augmented IPW
# ---------------------------------------------------------------------------

def test_criterion_3_unit_level_reduction():
    worst_eq = 0.0
    worst_aipw = 0.0
    level = SensitivityLevel(1.0)
    for seed in range(5):
        data = generate(DgpSpec("C1", 300, 6, 6000 + seed))
        fit = fit_levels(data, [level], "RCAL",
                         TuningGrid(n_points=5, n_folds=4, fold_seed=seed))[1.0]
        up = bounds.point_bound(data, fit, level, "Upper")
        lo = bounds.point_bound(data, fit, level, "Lower")
        worst_eq = max(worst_eq, abs(up - lo))
        f_std, _ = fit.designs_for(data)
        pi = 1.0 / (1.0 + np.exp(-(f_std @ fit.gamma.values)))
        eta = f_std @ fit.alpha_plus.values
        aipw = float(np.mean(data.t * data.y / pi - (data.t / pi - 1.0) * eta))
        worst_aipw = max(worst_aipw, abs(up - aipw))
    ok = worst_eq <= 1e-12 and worst_aipw <= 1e-10
    report(3, "unit-level reduction", ok,
           f"upper-lower gap {worst_eq:.2e}, AIPW difference {worst_aipw:.2e}")


# ---------------------------------------------------------------------------
# 4. population orderings
# ---------------------------------------------------------------------------

def test_criterion_4_population_orderings():
    n_mc = 1_000_000
    n_se = 4.0
    seed = 7000
    failures = []

    def lin_q(b):
        return lambda X: np.hstack([np.ones((X.shape[0], 1)), X]) @ b

    for config in ("C1", "C2"):
        pop = Population(config, 4)
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        mu1 = float(pop.m_star(pop.draw_x(rng, n_mc)).mean())
        uppers = {}
        lowers = {}
        for lam in (1.2, 1.5, 2.0):
            level = SensitivityLevel(lam)
            sharp_up = population_bound_oracle(
                pop, level, sharp_quantile_fn(pop, level, "Upper"), n_mc, seed)
            sharp_lo = population_bound_oracle(
                pop, level, sharp_quantile_fn(pop, level, "Lower"), n_mc, seed,
                side="Lower")
            bw_up = population_quantile_coefficients(pop, level, True, 300_000, seed + 1)
            bu_up = population_quantile_coefficients(pop, level, False, 300_000, seed + 1)
            bw_lo = population_quantile_coefficients(pop, level, True, 300_000, seed + 1,
                                                     side="Lower")
            relax_up = population_bound_oracle(pop, level, lin_q(bw_up), n_mc, seed)
            relax_up_u = population_bound_oracle(pop, level, lin_q(bu_up), n_mc, seed)
            relax_lo = population_bound_oracle(pop, level, lin_q(bw_lo), n_mc, seed,
                                               side="Lower")
            uppers[lam] = sharp_up
            lowers[lam] = sharp_lo

            def tol(a, b):
                return n_se * float(np.hypot(a.mc_se, b.mc_se))

            chain = [
                ("lower_h <= lower", relax_lo.value
                 <= sharp_lo.value + tol(relax_lo, sharp_lo)),
                ("lower <= mu1", sharp_lo.value <= mu1 + n_se * sharp_lo.mc_se),
                ("mu1 <= upper", mu1 <= sharp_up.value + n_se * sharp_up.mc_se),
                ("upper <= upper_h", sharp_up.value
                 <= relax_up.value + tol(sharp_up, relax_up)),
                ("weighted <= unweighted", relax_up.value
                 <= relax_up_u.value + tol(relax_up, relax_up_u)),
            ]
            for name, holds in chain:
                if not holds:
                    failures.append(f"{config} lam={lam}: {name}")
        for a, b in ((1.2, 1.5), (1.5, 2.0)):
            gap = n_se * float(np.hypot(uppers[a].mc_se, uppers[b].mc_se))
            if not uppers[a].value <= uppers[b].value + gap:
                failures.append(f"{config}: upper({a}) <= upper({b})")
            if not lowers[b].value <= lowers[a].value + gap:
                failures.append(f"{config}: lower({b}) <= lower({a})")
    report(4, "population orderings", not failures,
           "all chains hold at 4 MC SEs" if not failures else "; ".join(failures))


# ---------------------------------------------------------------------------
# 5. coverage: fast gate and full-scale reproduction
# ---------------------------------------------------------------------------

def test_criterion_5_coverage_fast_gate():
    reps = GATE_REPS
    rep = run_replications(
        DgpSpec("C2", 400, 50, 0), ["rcal", "rcal-relaxed", "rml"],
        [1.0, 1.5, 2.0], reps, TuningGrid(fold_seed=0), SolverSettings(),
        base_seed=41_000, threads=ACCEPT_THREADS, true_bound_mc=400_000)
    problems = []
    if rep.failures:
        problems.append(f"{len(rep.failures)} failures")
    # per-replicate properties
    by_key = {}
    for record in rep.records:
        by_key[(record.replicate, record.method, record.lam)] = record
    for (r, method, lam), record in by_key.items():
        if lam == 1.0 and record.lower != record.upper:
            problems.append(f"rep {r} {method}: bounds differ at unit level")
            break
    for (r, method, lam), record in by_key.items():
        if method != "rcal":
            continue
        relaxed = by_key.get((r, "rcal-relaxed", lam))
        if relaxed is None:
            continue
        if relaxed.upper < record.upper - 1e-10 or relaxed.lower > record.lower + 1e-10:
            problems.append(f"rep {r} lam={lam}: relaxation narrowed the bounds")
            break
    for record in rep.records:
        if not (np.isfinite(record.lower) and np.isfinite(record.upper)
                and record.se_lower >= 0 and record.se_upper >= 0):
            problems.append("non-finite record")
            break
    coverage = {(row["method"], row["lambda"], row["side"]): row["coverage"]
                for row in rep.coverage()}
    # sanity floor: intervals are not wildly anti-conservative at gate scale
    for (method, lam, side), value in coverage.items():
        if method in ("rcal-relaxed", "rml") and value < 0.60:
            problems.append(f"{method} lam={lam} {side} coverage {value:.2f}")
    lines = [f"{m} lam={l} {s}={coverage[(m, l, s)]:.3f}"
             for m in ("rcal-relaxed", "rml") for l in (1.5, 2.0)
             for s in ("upper95", "two90")]
    report(5, f"coverage fast gate ({reps} reps, n=400, p=50)", not problems,
           ("; ".join(problems) if problems else " ".join(lines)))


@pytest.mark.slow
@pytest.mark.skipif(not FULL, reason="full-scale reproduction: set SENSCAL_ACCEPT_FULL=1")
def test_criterion_5_coverage_full_scale():
    targets_two90_rcal = {1.0: 0.876, 1.5: 0.898, 2.0: 0.900}
    targets_upper95_rml = {1.0: 0.866, 1.5: 0.834, 2.0: 0.834}
    rep = run_replications(
        DgpSpec("C2", 800, 200, 0), ["rcal-relaxed", "rml"], [1.0, 1.5, 2.0],
        200, TuningGrid(fold_seed=0), SolverSettings(),
        base_seed=52_000, threads=ACCEPT_THREADS, true_bound_mc=1_000_000)
    coverage = {(row["method"], row["lambda"], row["side"]): row["coverage"]
                for row in rep.coverage()}
    problems = []
    for lam, target in targets_two90_rcal.items():
        got = coverage[("rcal-relaxed", lam, "two90")]
        if abs(got - target) > 0.05:
            problems.append(f"rcal-relaxed two90 lam={lam}: {got:.3f} vs {target}")
    for lam, target in targets_upper95_rml.items():
        got = coverage[("rml", lam, "upper95")]
        if abs(got - target) > 0.05:
            problems.append(f"rml upper95 lam={lam}: {got:.3f} vs {target}")
    for lam in (1.5, 2.0):
        if not coverage[("rml", lam, "upper95")] <= 0.90:
            problems.append(f"rml does not under-cover at lam={lam}")
        if not coverage[("rcal-relaxed", lam, "upper95")] >= 0.92:
            problems.append(f"rcal-relaxed under-covers at lam={lam}")
    detail = "; ".join(f"{k}={v:.3f}" for k, v in sorted(coverage.items())[:9])
    report(5, "coverage full-scale reproduction", not problems,
           ("; ".join(problems) if problems else detail))


# ---------------------------------------------------------------------------
# 6. non-penalized calibrated vs likelihood comparison
# ---------------------------------------------------------------------------

def test_criterion_6_unpenalized_comparison():
    rep = run_replications(
        DgpSpec("C2", 800, 10, 0), ["cal", "ml"], [1.5, 2.0], 200,
        base_seed=61_000, threads=ACCEPT_THREADS, true_bound_mc=200_000)
    problems = []
    if rep.failures:
        problems.append(f"{len(rep.failures)} failures")
    recs = {}
    for record in rep.records:
        recs.setdefault((record.method, record.lam), {})[record.replicate] = record
    for lam in (1.5, 2.0):
        cal = recs[("cal", lam)]
        ml = recs[("ml", lam)]
        common = sorted(set(cal) & set(ml))
        upper_diff = np.array([ml[r].upper - cal[r].upper for r in common])
        lower_diff = np.array([cal[r].lower - ml[r].lower for r in common])
        for name, diff in (("upper", upper_diff), ("lower", lower_diff)):
            mean = float(diff.mean())
            se = float(diff.std(ddof=1) / np.sqrt(len(diff)))
            if not mean > 2.0 * se:
                problems.append(
                    f"lam={lam} {name}: calibrated not closer "
                    f"(gap {mean:.4f}, se {se:.4f})")
    report(6, "unpenalized calibrated vs likelihood", not problems,
           "calibrated bounds tighter by more than 2 MC SEs"
           if not problems else "; ".join(problems))


# ---------------------------------------------------------------------------
# 7. relaxation monotonicity along the penalty path
# ---------------------------------------------------------------------------

def test_criterion_7_relaxation_monotonic():
    worst_drop_lp = 0.0
    worst_drop_aipw = 0.0
    level = SensitivityLevel(1.5)
    settings = SolverSettings()
    for seed in range(20):
        data = generate(DgpSpec("C1", 150, 5, 8000 + seed))
        gamma, _ = fit_rcal_gamma(data, 0.05, settings)
        lin, _ = clamped_linear_predictor(data.f @ gamma.values)
        weights = np.exp(-lin)
        lam_star = compute_lambda_star(LOSS_BETA_WQR, data,
                                       {"weights": weights, "tau": level.tau})
        grid = np.linspace(0.0, 1.1 * lam_star, 9)

        # inverse-probability-weighted form: exact LP optimal values
        values = [dual_bound_value(data, weights, level, lam, settings)
                  for lam in grid]
        worst_drop_lp = max(worst_drop_lp, float(np.max(-np.diff(values), initial=0.0)))

        # augmented form with the propensity and mean stages held fixed
        resp0 = data.y + level.span * np.zeros(data.n)
        alpha, _ = fit_wls_lasso(data, weights, resp0, 0.02, settings)
        eta = data.f @ alpha.values
        t = data.t
        const = float(np.mean(t * data.y + t * weights * data.y
                              - (t * (1 + weights) - 1) * eta))
        aipw_values = []
        for lam in grid:
            beta, diag = fit_wqr_lasso(data, weights, level.tau, float(lam), settings)
            aipw_values.append(const + level.span * diag.final_objective)
        worst_drop_aipw = max(worst_drop_aipw,
                              float(np.max(-np.diff(aipw_values), initial=0.0)))
    ok = worst_drop_lp <= 1e-10 and worst_drop_aipw <= 1e-10
    report(7, "relaxation monotonicity", ok,
           f"worst decrease: LP form {worst_drop_lp:.2e}, "
           f"augmented form {worst_drop_aipw:.2e} over 20 samples")


# ---------------------------------------------------------------------------
# 8. application-scale numbers (only when the dataset is supplied)
# ---------------------------------------------------------------------------

def test_criterion_8_application_numbers():
    path = os.environ.get("SENSCAL_RHC_CSV", str(DATA_DIR / "rhc.csv"))
    if not os.path.exists(path):
        print("ACCEPTANCE 8 application numbers: SKIP — dataset not supplied")
        pytest.skip("application dataset not supplied; criterion reported as "
                    "skipped, not failed")
    from senscal.cli import AnalysisConfig, run_analysis

    config = AnalysisConfig(
        dataset=path, outcome="y", treatment="t", covariates=[],
        interactions=True, min_nonzero=46, lambdas=[1.0], confidence=0.9,
        method="rcal-relaxed", family="linear", grid_points=25, grid_step=0.25,
        folds=5, seed=0, output="-")
    payload = run_analysis(config)
    ate = next(r for r in payload["reports"]
               if r["estimand"] == "ATE" and r["side"] == "Lower"
               and r["lambda"] == 1.0)
    point = float(ate["point"])
    se = float(np.sqrt(float(ate["variance"]) / payload["n"]))
    ok = abs(point - (-0.052)) <= 0.01 and abs(se - 0.012) <= 0.003
    report(8, "application numbers", ok,
           f"ATE point {point:.4f} (target -0.052 +- 0.01), "
           f"SE {se:.4f} (target 0.012 +- 0.003)")
