"""Regeneration of frozen test fixtures.

Golden values are produced by the Monte Carlo oracle and by first verified
runs of the estimation pipeline; they are rewritten only through the
``regen-golden`` command, never implicitly by the test suite.
"""

from __future__ import annotations

import json
import os

from .core import SensitivityLevel
from .oracle import population_bound_oracle, sharp_quantile_fn
from .pipeline import TuningGrid, fit_levels
from .simulation import DgpSpec, generate

POPULATION_BOUND_SEED = 424_242
POPULATION_BOUND_MC = 10_000_000
BETA_REGRESSION_SEED = 90_210


def golden_population_bounds() -> dict:
    """Sharp population bounds for the C1 configuration, frozen targets."""
    pop = DgpSpec("C1", 800, 10, 0).population()
    out = {"config": "C1", "p": 10, "n_mc": POPULATION_BOUND_MC,
           "seed": POPULATION_BOUND_SEED, "levels": {}}
    for lam in (1.5, 2.0):
        level = SensitivityLevel(lam)
        lo = population_bound_oracle(pop, level, sharp_quantile_fn(pop, level, "Lower"),
                                     POPULATION_BOUND_MC, POPULATION_BOUND_SEED,
                                     side="Lower")
        up = population_bound_oracle(pop, level, sharp_quantile_fn(pop, level, "Upper"),
                                     POPULATION_BOUND_MC, POPULATION_BOUND_SEED + 1,
                                     side="Upper")
        out["levels"][str(lam)] = {
            "lower": {"value": lo.value, "mc_se": lo.mc_se},
            "upper": {"value": up.value, "mc_se": up.mc_se},
        }
    return out


def golden_beta_regression() -> dict:
    """RCAL vs RML quantile coefficients on one C2 sample, frozen.

    The two methods differ through the weighting of the quantile stage;
    this pins both fits on a fixed sample as a change detector.
    """
    data = generate(DgpSpec("C2", 400, 20, BETA_REGRESSION_SEED))
    level = SensitivityLevel(1.5)
    grid = TuningGrid(fold_seed=BETA_REGRESSION_SEED)
    out = {"config": "C2", "n": 400, "p": 20, "seed": BETA_REGRESSION_SEED,
           "lambda": 1.5, "methods": {}}
    for method in ("RCAL", "RML"):
        fit = fit_levels(data, [level], method, grid)[level.lam]
        out["methods"][method] = {
            "beta_plus": [float(v) for v in fit.beta_plus.values],
            "beta_minus": [float(v) for v in fit.beta_minus.values],
            "lambda_beta_plus": fit.lambda_beta_plus,
            "lambda_gamma": fit.lambda_gamma,
        }
    return out


def golden_tiny_analysis(data_path: str) -> dict:
    """Full analysis payload for the bundled 20-row dataset, frozen."""
    from .cli import AnalysisConfig, run_analysis

    config = AnalysisConfig(
        dataset=data_path, outcome="y", treatment="t",
        covariates=["x1", "x2", "x3"], interactions=False, min_nonzero=0,
        lambdas=[1.0, 1.5], confidence=0.9, method="rcal-relaxed",
        family="linear", grid_points=5, grid_step=1.0, folds=4, seed=3,
        output="-",
    )
    return run_analysis(config)


def regenerate_golden(out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "population_bounds.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(golden_population_bounds(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    path = os.path.join(out_dir, "beta_regression.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(golden_beta_regression(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    tiny = os.path.join(os.path.dirname(out_dir), "data", "tiny.csv")
    if os.path.exists(tiny):
        path = os.path.join(out_dir, "tiny_analysis.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(golden_tiny_analysis(tiny), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written
