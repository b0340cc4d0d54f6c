"""Independent certification oracles.

Two kinds of ground truth live here:

* :func:`solve_primal_bound` evaluates the sample upper bound directly in
  its primal form: per-treated-unit multipliers boxed in
  ``[1/lam, lam]``, the intercept moment held exactly, and the remaining
  moments held exactly (``relax_slack == 0``) or within a box.  The
  constraint builder is written independently of the quantile-regression
  formulation so that agreement of the two objective values is a real
  duality certificate, not a tautology.

* :func:`population_bound_oracle` computes population bounds for a known
  data-generating process by Monte Carlo over fresh covariate draws, with
  the conditional expectation of the check loss taken in closed form for
  normal outcomes, which removes the outcome-noise contribution to the
  Monte Carlo error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from . import lp
from .core import ObservedData, SensitivityLevel, check_loss
from .solvers import SolverSettings, fit_wqr_lasso


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Sample bound linear program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrimalBoundProblem:
    """Primal data for the sample upper bound at one sensitivity level.

    ``weights``, ``y`` and ``h`` describe the treated units only;
    ``n_total`` is the full sample size entering the ``1/n`` scaling.
    ``relax_slack`` is the box half-width on the non-intercept moments
    (``span * lambda_beta``); zero gives the exact-moment problem.
    """

    weights: np.ndarray
    y: np.ndarray
    h: np.ndarray
    n_total: int
    level: SensitivityLevel
    relax_slack: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        y = np.asarray(self.y, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if w.ndim != 1 or y.shape != w.shape or h.shape[0] != w.shape[0]:
            raise OracleError("inconsistent primal problem dimensions")
        if np.any(w < 0):
            raise OracleError("weights must be nonnegative")
        if not np.all(h[:, 0] == 1.0):
            raise OracleError("moment matrix must carry an intercept column")
        if self.relax_slack < 0:
            raise OracleError("relax_slack must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "h", h)


def solve_primal_bound(problem: PrimalBoundProblem,
                       tol: float = 1e-11) -> tuple[float, np.ndarray]:
    """Maximize the weighted-outcome objective over feasible multipliers.

    Returns the optimal value of

        (1/n) * sum_i ( y_i + w_i * lam_i * y_i )

    over ``lam_i`` in ``[1/lam, lam]`` subject to the moment constraints,
    together with the dual multipliers of the moment rows.  The constant
    multiplier ``lam_i == 1`` is always feasible.
    """
    w = problem.weights
    y = problem.y
    h = problem.h
    n = problem.n_total
    n_act, width = h.shape
    m = width - 1
    lam = problem.level.lam

    # rows: one moment per column of h; slack columns only for j >= 1
    mat = np.zeros((width, n_act + m))
    mat[:, :n_act] = (h * w[:, None]).T / n
    for j in range(1, width):
        mat[j, n_act + j - 1] = 1.0
    rhs = (h * w[:, None]).sum(axis=0) / n
    obj = np.concatenate([w * y / n, np.zeros(m)])
    lower = np.concatenate([np.full(n_act, 1.0 / lam), np.full(m, -problem.relax_slack)])
    upper = np.concatenate([np.full(n_act, lam), np.full(m, problem.relax_slack)])

    sol = lp.solve_bounded_lp(mat, rhs, obj, lower, upper, tol=tol)
    if sol.status != "optimal":
        raise OracleError(f"primal bound LP failed ({sol.status})")
    value = sol.objective + float(y.sum()) / n
    return value, np.asarray(sol.row_multipliers, dtype=float)


def dual_bound_value(data: ObservedData, weights: np.ndarray,
                     level: SensitivityLevel, lambda_beta: float,
                     settings: SolverSettings | None = None) -> float:
    """Sample upper bound via the quantile-regression representation.

    The inverse-probability-weighted term plus ``span`` times the
    penalized weighted quantile objective at its minimizer.  Agrees with
    :func:`solve_primal_bound` on the same inputs by linear-programming
    duality.
    """
    settings = settings or SolverSettings()
    _, diag = fit_wqr_lasso(data, weights, level.tau, lambda_beta, settings)
    t = data.t
    ipw = float(np.mean(t * data.y * (1.0 + np.where(t == 1.0, weights, 0.0))))
    return ipw + level.span * diag.final_objective


def primal_problem_from_sample(data: ObservedData, weights: np.ndarray,
                               level: SensitivityLevel,
                               lambda_beta: float) -> PrimalBoundProblem:
    treated = data.treated_mask()
    return PrimalBoundProblem(
        weights=np.asarray(weights, dtype=float)[treated],
        y=data.y[treated],
        h=data.h[treated],
        n_total=data.n,
        level=level,
        relax_slack=level.span * lambda_beta,
    )


def certify_duality(n_instances: int = 200, n_max: int = 60, m_max: int = 5,
                    seed: int = 0,
                    levels=(1.2, 1.5, 2.0),
                    lambda_betas=(0.0, 0.05, 0.2),
                    tol: float = 1e-6) -> dict:
    """Random-instance agreement check between the two bound routes.

    Draws random samples, weights and moment matrices; for each instance
    and each (level, penalty) pair compares the primal LP value with the
    quantile-regression dual value.  Returns the worst gap and failures.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = []
    checked = 0
    for inst in range(n_instances):
        n = int(rng.integers(12, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        X = rng.normal(size=(n, m))
        h = np.hstack([np.ones((n, 1)), X])
        y = 1.0 + X @ rng.normal(size=m) + rng.normal(size=n)
        t = (rng.random(n) < 0.7).astype(float)
        if t.sum() < 3 or t.sum() == n:
            t[:3] = 1.0
            t[-1] = 0.0
        weights = np.exp(rng.normal(size=n) * 0.6)
        lam = float(levels[inst % len(levels)])
        lam_beta = float(lambda_betas[(inst // len(levels)) % len(lambda_betas)])
        level = SensitivityLevel(lam)
        data = ObservedData(y, t, h, h)
        primal, _ = solve_primal_bound(primal_problem_from_sample(data, weights, level, lam_beta))
        dual = dual_bound_value(data, weights, level, lam_beta)
        gap = abs(primal - dual)
        worst = max(worst, gap)
        checked += 1
        if gap > tol:
            failures.append({"instance": inst, "n": n, "m": m, "lambda": lam,
                             "lambda_beta": lam_beta, "gap": gap})
    return {"instances": checked, "worst_gap": worst, "failures": failures,
            "tolerance": tol, "passed": not failures}


# ---------------------------------------------------------------------------
# Population bounds by Monte Carlo
# ---------------------------------------------------------------------------

def normal_expected_check_loss(z, tau: float):
    """``E check_loss(eps, z, tau)`` for standard normal ``eps``.

    Equals ``tau*(pdf(z) - z*(1 - cdf(z))) + (1-tau)*(pdf(z) + z*cdf(z))``.
    """
    z = np.asarray(z, dtype=float)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    cdf = ndtr(z)
    out = tau * (pdf - z * (1.0 - cdf)) + (1.0 - tau) * (pdf + z * cdf)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class OracleValue:
    value: float
    mc_se: float
    n_mc: int
    low_precision: bool  # set when n_mc is below the recommended floor

    def within(self, other: float, n_se: float) -> bool:
        return abs(self.value - other) <= n_se * self.mc_se


def population_bound_oracle(
    population,
    level: SensitivityLevel,
    q_fn: Callable[[np.ndarray], np.ndarray],
    n_mc: int,
    seed: int,
    side: str = "Upper",
    batch: int = 200_000,
) -> OracleValue:
    """Population bound for a putative quantile function by Monte Carlo.

    ``population`` must provide ``draw_x(rng, size)``, ``pi_star(X)``,
    ``m_star(X)`` and ``sigma`` (conditional standard deviation of the
    outcome; normal conditional law assumed, degenerate allowed).  For
    each fresh covariate draw the conditional expected check loss is
    computed in closed form, so only covariate variation contributes
    Monte Carlo error.  ``q_fn`` maps a covariate matrix to putative
    quantile values.
    """
    if side not in ("Upper", "Lower"):
        raise OracleError("side must be 'Upper' or 'Lower'")
    if n_mc < 1:
        raise OracleError("n_mc must be positive")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    tau = level.tau if side == "Upper" else 1.0 - level.tau
    sign = 1.0 if side == "Upper" else -1.0
    sigma = float(population.sigma)

    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_mc:
        size = min(batch, n_mc - done)
        X = population.draw_x(rng, size)
        pi = np.asarray(population.pi_star(X), dtype=float)
        m = np.asarray(population.m_star(X), dtype=float)
        q = np.asarray(q_fn(X), dtype=float)
        if sigma > 0:
            exp_loss = sigma * normal_expected_check_loss((q - m) / sigma, tau)
        else:
            exp_loss = check_loss(m, q, tau)
        vals = m + sign * level.span * (1.0 - pi) * exp_loss
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += size
    mean = total / n_mc
    var = max(total_sq / n_mc - mean * mean, 0.0)
    return OracleValue(mean, float(np.sqrt(var / n_mc)), n_mc, n_mc < 10_000)


def sharp_quantile_fn(population, level: SensitivityLevel, side: str = "Upper"):
    """The true conditional quantile at the level the sharp bound needs."""
    tau = level.tau if side == "Upper" else 1.0 - level.tau
    z = float(ndtri(tau))
    sigma = float(population.sigma)

    def q_fn(X):
        return np.asarray(population.m_star(X), dtype=float) + sigma * z

    return q_fn


def population_quantile_coefficients(
    population,
    level: SensitivityLevel,
    weighted: bool,
    n_mc: int,
    seed: int,
    side: str = "Upper",
) -> np.ndarray:
    """Population linear quantile coefficients under the chosen weighting.

    Minimizes the population weighted check loss over linear coefficients
    on ``(1, X)`` with weight ``1 - pi_star`` (weighted) or ``pi_star``
    (unweighted), using the smooth closed form of the conditional
    expectation on a fixed covariate sample, with analytic gradient.
    """
    from scipy.optimize import minimize

    if float(population.sigma) <= 0:
        raise OracleError("population quantile fit needs a nondegenerate outcome")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    X = population.draw_x(rng, n_mc)
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    pi = np.asarray(population.pi_star(X), dtype=float)
    m = np.asarray(population.m_star(X), dtype=float)
    weight = (1.0 - pi) if weighted else pi
    tau = level.tau if side == "Upper" else 1.0 - level.tau
    sigma = float(population.sigma)

    def value_grad(b):
        z = (design @ b - m) / sigma
        val = float(np.mean(weight * sigma * normal_expected_check_loss(z, tau)))
        grad = design.T @ (weight * (ndtr(z) - tau)) / X.shape[0]
        return val, grad

    b0 = np.zeros(design.shape[1])
    b0[0] = float(np.median(m))
    res = minimize(value_grad, b0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10})
    if not res.success and float(np.linalg.norm(res.jac)) > 1e-6:
        raise OracleError(f"population quantile fit failed: {res.message}")
    return np.asarray(res.x, dtype=float)
