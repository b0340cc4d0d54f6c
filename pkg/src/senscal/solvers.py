"""Penalized convex solvers for the three nuisance models.

Five fitting routines live here:

* :func:`fit_rcal_gamma` -- calibrated propensity loss
  ``mean(T exp(-f'g) + (1-T) f'g)`` with a lasso penalty, by monotone
  accelerated proximal gradient with backtracking.
* :func:`fit_ml_gamma` -- lasso-penalized logistic likelihood (the
  maximum-likelihood comparator), same algorithm.
* :func:`fit_wqr_lasso` / :func:`fit_uqr_lasso` -- weighted / unweighted
  quantile regression with a lasso penalty, solved exactly as a linear
  program through the in-repo simplex solver; the returned diagnostics
  carry the primal-dual gap as the optimality certificate.
* :func:`fit_wls_lasso` -- weighted least squares with a lasso penalty by
  cyclic coordinate descent.
* :func:`fit_wlogit_lasso` -- weighted logistic regression with a lasso
  penalty (binary-outcome variant) by IRLS with inner coordinate descent.

The intercept is never penalized.  All solvers are pure functions of their
inputs and accept optional warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import lp
from .core import (
    LINEAR_PREDICTOR_CAP,
    CoefficientVector,
    ObservedData,
    clamped_linear_predictor,
)


class SolverError(RuntimeError):
    """Hard solver failure (bad inputs, internal LP failure, ...)."""


class NonConvergenceError(SolverError):
    """Iteration budget exhausted before the convergence gate was met."""

    def __init__(self, message, coefficients=None, diagnostics=None):
        super().__init__(message)
        self.coefficients = coefficients
        self.diagnostics = diagnostics


@dataclass
class SolverSettings:
    """Iteration and tolerance knobs shared by all solvers.

    ``tolerance`` gates the relative objective change; convergence also
    requires the KKT residual to fall below ``10 * tolerance``.
    ``lp_feasibility_tol`` is the primal-dual agreement required from the
    linear-programming solves.  ``step_shrink`` is the backtracking factor
    for the proximal-gradient line search.
    """

    max_iterations: int = 20000
    tolerance: float = 1e-8
    lp_feasibility_tol: float = 1e-9
    step_shrink: float = 0.5
    record_history: bool = False

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise SolverError("max_iterations must be positive")
        if self.tolerance <= 0 or self.lp_feasibility_tol <= 0:
            raise SolverError("tolerances must be positive")
        if not 0.0 < self.step_shrink < 1.0:
            raise SolverError("step_shrink must lie in (0, 1)")


@dataclass
class FitDiagnostics:
    iterations_used: int
    final_objective: float
    kkt_max_violation: float
    converged: bool
    clamp_events: int = 0
    objective_history: Optional[list] = field(default=None, repr=False)


def _soft_threshold(v: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def _lasso_kkt_violation(grad: np.ndarray, x: np.ndarray, penalty: np.ndarray) -> float:
    """Max violation of the subgradient conditions of grad + penalty*sign."""
    active = x != 0.0
    viol = np.where(
        active,
        np.abs(grad + penalty * np.sign(x)),
        np.maximum(np.abs(grad) - penalty, 0.0),
    )
    return float(viol.max(initial=0.0))


# ---------------------------------------------------------------------------
# Proximal gradient core
# ---------------------------------------------------------------------------

def _prox_lasso_minimize(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    penalty: np.ndarray,
    settings: SolverSettings,
):
    """Monotone accelerated proximal gradient for smooth + lasso objectives.

    Acceleration is applied only when it does not break monotone descent:
    if the accelerated candidate fails to decrease the total objective,
    the momentum is dropped and a plain proximal step from the incumbent
    is taken, which always descends.
    """

    def total(x, smooth=None):
        s = smooth if smooth is not None else value_and_grad(x)[0]
        return s + float(penalty @ np.abs(x))

    x = np.asarray(x0, dtype=float).copy()
    fx_smooth, gx = value_and_grad(x)
    fx = fx_smooth + float(penalty @ np.abs(x))
    lip = max(1.0, float(np.linalg.norm(gx)))
    momentum = np.zeros_like(x)
    t_acc = 1.0
    history = [fx] if settings.record_history else None

    converged = False
    kkt = np.inf
    it = 0
    while it < settings.max_iterations:
        it += 1
        z = x + momentum
        fz_smooth, gz = value_and_grad(z)

        # backtracking line search on the smooth part
        stalled = False
        while True:
            cand = _soft_threshold(z - gz / lip, penalty / lip)
            diff = cand - z
            quad = fz_smooth + float(gz @ diff) + 0.5 * lip * float(diff @ diff)
            f_cand_smooth, _ = _value_only(value_and_grad, cand)
            if f_cand_smooth <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            lip /= settings.step_shrink
            if lip > 1e18:
                stalled = True
                break

        if stalled:
            break  # cannot make progress at any step size; flag non-convergence

        f_cand = f_cand_smooth + float(penalty @ np.abs(cand))
        if f_cand > fx + 1e-15 * max(1.0, abs(fx)):
            # accelerated step overshot: restart momentum, plain step from x
            t_acc = 1.0
            momentum = np.zeros_like(x)
            fz_smooth, gz = value_and_grad(x)
            while True:
                cand = _soft_threshold(x - gz / lip, penalty / lip)
                diff = cand - x
                quad = fz_smooth + float(gz @ diff) + 0.5 * lip * float(diff @ diff)
                f_cand_smooth, _ = _value_only(value_and_grad, cand)
                if f_cand_smooth <= quad + 1e-12 * max(1.0, abs(quad)):
                    break
                lip /= settings.step_shrink
                if lip > 1e18:
                    stalled = True
                    break
            if stalled:
                break
            f_cand = f_cand_smooth + float(penalty @ np.abs(cand))

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        momentum = ((t_acc - 1.0) / t_next) * (cand - x)
        t_acc = t_next

        rel_change = abs(fx - f_cand) / max(1.0, abs(fx))
        x, fx = cand, min(f_cand, fx)
        if history is not None:
            history.append(fx)
        lip *= 0.95  # allow the step to grow again

        if not np.isfinite(fx) or float(np.abs(x).max(initial=0.0)) > 1e8:
            break  # coefficients diverging: loss unbounded below

        if rel_change < settings.tolerance:
            _, gx = value_and_grad(x)
            kkt = _lasso_kkt_violation(gx, x, penalty)
            if kkt < 10.0 * settings.tolerance:
                converged = True
                break

    if not np.isfinite(kkt):
        _, gx = value_and_grad(x)
        kkt = _lasso_kkt_violation(gx, x, penalty)
    return x, fx, kkt, it, converged, history


def _value_only(value_and_grad, x):
    # allows value_and_grad implementations to skip gradient work
    return value_and_grad(x, need_grad=False) if _accepts_flag(value_and_grad) else value_and_grad(x)


def _accepts_flag(fn) -> bool:
    return getattr(fn, "supports_value_only", False)


# ---------------------------------------------------------------------------
# Propensity-model solvers
# ---------------------------------------------------------------------------

def fit_rcal_gamma(
    data: ObservedData,
    lambda_gamma: float,
    settings: SolverSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Lasso-penalized calibrated propensity fit.

    Minimizes ``mean(T exp(-f'g) + (1-T) f'g) + lambda * ||g_slopes||_1``.
    At the solution the inverse weights ``1/pi`` average to 1 over the
    whole sample within tolerance, and every penalized coordinate satisfies
    the box condition ``|mean(T f_j / pi) - mean(f_j)| <= lambda``.

    Raises :class:`NonConvergenceError` if the iteration budget runs out,
    which happens in particular when the treated and untreated groups are
    separable and the loss is unbounded below.
    """
    settings = settings or SolverSettings()
    if data.n_treated == 0:
        raise SolverError("treated group is empty")
    n = data.n
    f_treated = data.f[data.treated_mask()]
    untreated_mean = data.f[~data.treated_mask()].sum(axis=0) / n
    clamp_box = [0]
    cap = LINEAR_PREDICTOR_CAP

    def value_and_grad(gamma, need_grad=True):
        # beyond the overflow guard the exponential continues linearly,
        # which keeps the objective convex with a gradient consistent with
        # the clamped weights
        raw = f_treated @ gamma
        lp_t = np.clip(raw, -cap, cap)
        clamp_box[0] = int(np.count_nonzero(raw != lp_t))
        wts = np.exp(-lp_t)
        terms = wts * (1.0 - (raw - lp_t))
        value = float(terms.sum()) / n + float(untreated_mean @ gamma)
        if not need_grad:
            return value, None
        grad = untreated_mean - (f_treated.T @ wts) / n
        return value, grad

    value_and_grad.supports_value_only = True
    return _run_prox_fit(
        data.f.shape[1], lambda_gamma, value_and_grad, settings, warm_start,
        clamp_box, raise_on_nonconvergence=True, label="calibrated propensity fit",
    )


def fit_ml_gamma(
    data: ObservedData,
    lambda_gamma: float,
    settings: SolverSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Lasso-penalized logistic likelihood fit of the propensity model.

    Non-convergence (e.g. separable data at ``lambda == 0``, where the
    coefficients diverge) is flagged in the diagnostics rather than raised.
    """
    settings = settings or SolverSettings()
    n = data.n
    f, t = data.f, data.t
    clamp_box = [0]

    def value_and_grad(gamma, need_grad=True):
        lin, n_clamped = clamped_linear_predictor(f @ gamma)
        clamp_box[0] = n_clamped
        value = float(np.logaddexp(0.0, lin).sum() - t @ lin) / n
        if not need_grad:
            return value, None
        prob = 1.0 / (1.0 + np.exp(-lin))
        grad = f.T @ (prob - t) / n
        return value, grad

    value_and_grad.supports_value_only = True
    coef, diag = _run_prox_fit(
        data.f.shape[1], lambda_gamma, value_and_grad, settings, warm_start,
        clamp_box, raise_on_nonconvergence=False, label="logistic propensity fit",
    )
    lin, _ = clamped_linear_predictor(f @ coef.values)
    prob = 1.0 / (1.0 + np.exp(-lin))
    if np.all(np.abs(t - prob) < 1e-4):
        # every unit classified perfectly: separation, no finite minimizer
        diag.converged = False
    return coef, diag


def _run_prox_fit(width, lam, value_and_grad, settings, warm_start, clamp_box,
                  raise_on_nonconvergence, label):
    if lam < 0:
        raise SolverError("penalty must be nonnegative")
    penalty = np.full(width, float(lam))
    penalty[0] = 0.0
    x0 = np.zeros(width) if warm_start is None else np.asarray(warm_start, dtype=float)
    x, fx, kkt, iters, converged, history = _prox_lasso_minimize(
        value_and_grad, x0, penalty, settings)
    diag = FitDiagnostics(iters, fx, kkt, converged, clamp_box[0], history)
    coef = CoefficientVector.standard(x)
    if not converged and raise_on_nonconvergence:
        raise NonConvergenceError(
            f"{label} did not converge in {settings.max_iterations} iterations "
            f"(KKT residual {kkt:.3e})",
            coefficients=coef, diagnostics=diag)
    return coef, diag


# ---------------------------------------------------------------------------
# Quantile-regression solvers (exact linear programming)
# ---------------------------------------------------------------------------

def fit_wqr_lasso(
    data: ObservedData,
    weights: np.ndarray,
    tau: float,
    lambda_beta: float,
    settings: SolverSettings | None = None,
    warm_state: dict | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Weighted quantile regression with a lasso penalty, solved as an LP.

    Minimizes ``mean(T w check_loss(y, h'b, tau)) + lambda * ||b_slopes||_1``
    over ``b``.  The check loss and the penalty both linearize, so the
    problem is solved exactly in its dual form: box-bounded scores per
    treated observation plus one box-bounded slack per penalized column,
    with one equality row per coefficient.  The optimal row multipliers are
    the coefficients, and the primal-dual gap certifies optimality.

    Minimizers may be non-unique; any vertex optimum is returned, and all
    downstream contracts are stated in objective value.

    ``warm_state`` is an optional mutable dict carrying the simplex basis
    between calls on the same data (used along a tuning-parameter path).
    """
    settings = settings or SolverSettings()
    if not 0.0 < tau < 1.0:
        raise SolverError("quantile level must lie in (0, 1)")
    if lambda_beta < 0:
        raise SolverError("penalty must be nonnegative")
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape[0] != data.n:
        raise SolverError("weights length must match the sample size")
    treated = data.treated_mask()
    if np.any(weights[treated] < 0):
        raise SolverError("weights must be nonnegative")
    omega_full = np.where(treated, weights, 0.0) / data.n
    active = omega_full > 0
    if not active.any():
        raise SolverError("total treated weight is zero")

    h_act = data.h[active]
    y_act = data.y[active]
    om = omega_full[active]
    n_act, width = h_act.shape
    m = width - 1

    a_cols = h_act.T * om  # (width, n_act)
    mat = np.empty((width, n_act + m))
    mat[:, :n_act] = a_cols
    mat[:, n_act:] = 0.0
    mat[1:, n_act:] = np.eye(m)
    rhs = np.zeros(width)
    obj = np.concatenate([om * y_act, np.zeros(m)])
    lower = np.concatenate([np.full(n_act, tau - 1.0), np.full(m, -lambda_beta)])
    upper = np.concatenate([np.full(n_act, tau), np.full(m, lambda_beta)])

    kwargs = {}
    if warm_state and warm_state.get("shape") == mat.shape:
        kwargs = {"basis": warm_state["basis"], "vstatus": warm_state["vstatus"]}
    else:
        kwargs = _wqr_crash_start(y_act, om, tau, n_act, m)
    sol = lp.solve_bounded_lp(mat, rhs, obj, lower, upper,
                              tol=settings.lp_feasibility_tol, **kwargs)
    if sol.status == "infeasible":
        raise SolverError("quantile LP reported infeasible: internal bug")
    if sol.status != "optimal":
        raise SolverError(f"quantile LP did not terminate ({sol.status})")
    if warm_state is not None:
        warm_state.update(shape=mat.shape, basis=sol.basis, vstatus=sol.vstatus)

    beta = np.asarray(sol.row_multipliers, dtype=float)
    resid = y_act - h_act @ beta
    primal = float(om @ np.where(resid >= 0, tau * resid, (tau - 1.0) * resid))
    primal += lambda_beta * float(np.abs(beta[1:]).sum())
    gap = abs(primal - sol.objective)
    converged = gap <= settings.lp_feasibility_tol * max(1.0, abs(primal))
    diag = FitDiagnostics(sol.iterations, primal, gap, converged)
    return CoefficientVector.standard(beta), diag


def weighted_quantile(values: np.ndarray, weights: np.ndarray, tau: float) -> float:
    """Leftmost minimizer of the weighted check loss at level ``tau``.

    Smallest ``v`` in ``values`` whose cumulative weight reaches
    ``tau * total``.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    total = cw[-1]
    if total <= 0:
        raise SolverError("total weight is zero")
    idx = int(np.searchsorted(cw, tau * total, side="left"))
    idx = min(idx, values.shape[0] - 1)
    return float(values[order[idx]])


def _wqr_crash_start(y_act, om, tau, n_act, m):
    """Starting basis for the quantile LP from the intercept-only fit.

    Scores sit at the bound given by the sign of the residual around the
    weighted quantile; the tied observation carries the intercept row and
    the penalty slacks carry the remaining rows.  At the top of a tuning
    path this point is already optimal, so the simplex starts hot.
    """
    q0 = weighted_quantile(y_act, om, tau)
    resid = y_act - q0
    vstatus = np.empty(n_act + m, dtype=np.int8)
    vstatus[:n_act] = np.where(resid > 0, lp.AT_UPPER, lp.AT_LOWER)
    vstatus[n_act:] = lp.AT_LOWER
    tie = int(np.flatnonzero(resid == 0)[0]) if np.any(resid == 0) else int(np.argmin(np.abs(resid)))
    basis = np.concatenate([[tie], n_act + np.arange(m)]).astype(np.intp)
    return {"basis": basis, "vstatus": vstatus}


def fit_uqr_lasso(
    data: ObservedData,
    tau: float,
    lambda_beta: float,
    settings: SolverSettings | None = None,
    warm_state: dict | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Unweighted quantile regression lasso: unit weights on the treated."""
    return fit_wqr_lasso(data, np.ones(data.n), tau, lambda_beta, settings, warm_state)


# ---------------------------------------------------------------------------
# Outcome-mean solvers
# ---------------------------------------------------------------------------

def fit_wls_lasso(
    data: ObservedData,
    weights: np.ndarray,
    response: np.ndarray,
    lambda_alpha: float,
    settings: SolverSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Weighted least squares with a lasso penalty by coordinate descent.

    Minimizes ``mean(T w (resp - f'a)^2) / 2 + lambda * ||a_slopes||_1``.
    The final sweep re-solves the intercept exactly, so the intercept
    normal equation ``mean(T w (resp - f'a)) = 0`` holds to rounding
    error at the solution.
    """
    settings = settings or SolverSettings()
    if lambda_alpha < 0:
        raise SolverError("penalty must be nonnegative")
    weights = np.asarray(weights, dtype=float).ravel()
    response = np.asarray(response, dtype=float).ravel()
    if weights.shape[0] != data.n or response.shape[0] != data.n:
        raise SolverError("weights/response length must match the sample size")
    treated = data.treated_mask()
    if np.any(weights[treated] < 0):
        raise SolverError("weights must be nonnegative")
    omega_full = np.where(treated, weights, 0.0) / data.n
    active = omega_full > 0
    if not active.any():
        raise SolverError("total treated weight is zero")

    f_act = np.ascontiguousarray(data.f[active])
    r_act = response[active]
    om = omega_full[active]
    width = f_act.shape[1]
    penalty = np.full(width, float(lambda_alpha))
    penalty[0] = 0.0
    col_scale = (f_act * f_act).T @ om  # per-coordinate curvature
    alpha = np.zeros(width) if warm_start is None else np.asarray(warm_start, dtype=float).copy()

    resid = r_act - f_act @ alpha
    wf = f_act * om[:, None]

    def objective(res, a):
        return 0.5 * float(om @ (res * res)) + float(penalty @ np.abs(a))

    def sweep(indices):
        nonlocal resid
        max_delta = 0.0
        for j in indices:
            if col_scale[j] <= 0.0:
                continue
            rho = float(wf[:, j] @ resid) + col_scale[j] * alpha[j]
            new = float(_soft_threshold(np.asarray(rho), np.asarray(penalty[j]))) / col_scale[j]
            step = new - alpha[j]
            if step != 0.0:
                resid -= step * f_act[:, j]
                alpha[j] = new
                max_delta = max(max_delta, abs(step) * np.sqrt(col_scale[j]))
        return max_delta

    history = [objective(resid, alpha)] if settings.record_history else None
    scale_ref = max(1.0, np.sqrt(float(om @ (r_act * r_act))))
    all_coords = list(range(1, width)) + [0]  # intercept last
    converged = False
    kkt = np.inf
    sweeps = 0
    while sweeps < settings.max_iterations:
        sweeps += 1
        delta_full = sweep(all_coords)
        if history is not None:
            history.append(objective(resid, alpha))
        # iterate on the active set until stable, then re-check all coords
        active = [j for j in all_coords if j == 0 or alpha[j] != 0.0]
        while len(active) < width and sweeps < settings.max_iterations:
            sweeps += 1
            if sweep(active) < settings.tolerance * scale_ref:
                break
            if history is not None:
                history.append(objective(resid, alpha))
        if delta_full < settings.tolerance * scale_ref:
            grad = -(wf.T @ resid)
            kkt = _lasso_kkt_violation(grad, alpha, penalty)
            if kkt < 10.0 * settings.tolerance:
                converged = True
                break

    if not np.isfinite(kkt):
        grad = -(wf.T @ resid)
        kkt = _lasso_kkt_violation(grad, alpha, penalty)
    diag = FitDiagnostics(sweeps, objective(resid, alpha), kkt, converged, 0, history)
    return CoefficientVector.standard(alpha), diag


def logistic_clip(lin: np.ndarray) -> np.ndarray:
    lin, _ = clamped_linear_predictor(lin)
    return 1.0 / (1.0 + np.exp(-lin))


def quantile_weight_factor(q_hat: np.ndarray, level) -> np.ndarray:
    """Slope of the transformed-outcome mean in the fitted probability.

    For the upward transform this is
    ``lam - span * (q_+ - (q - 1)_+)``, which lies in ``[1/lam, lam]``;
    the downward transform mirrors it as ``1/lam + span * (q_+ - (q-1)_+)``.
    Used to fold the quantile fit into the weighted logistic regression.
    """
    q = np.asarray(q_hat, dtype=float)
    clipped = np.maximum(q, 0.0) - np.maximum(q - 1.0, 0.0)
    return level.lam - level.span * clipped


def quantile_weight_factor_minus(q_hat: np.ndarray, level) -> np.ndarray:
    q = np.asarray(q_hat, dtype=float)
    clipped = np.maximum(q, 0.0) - np.maximum(q - 1.0, 0.0)
    return 1.0 / level.lam + level.span * clipped


def fit_wlogit_lasso(
    data: ObservedData,
    weights: np.ndarray,
    lambda_alpha: float,
    settings: SolverSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[CoefficientVector, FitDiagnostics]:
    """Weighted logistic regression with a lasso penalty (binary outcomes).

    Minimizes ``mean(T w (-y f'a + log(1 + exp(f'a)))) + lambda * ||a||_1``
    by IRLS with an inner coordinate-descent solve and step halving, which
    keeps the objective non-increasing.  Separable data are flagged as
    non-converged rather than raised.

    The score equation of this loss matches the calibration equation of
    the transformed-outcome mean model when the quantile factor
    (:func:`quantile_weight_factor`) is folded into ``w``; the loss itself
    is the standard weighted logistic negative log-likelihood, which is a
    valid antiderivative of that score.
    """
    settings = settings or SolverSettings()
    if lambda_alpha < 0:
        raise SolverError("penalty must be nonnegative")
    y = data.y
    if not np.all((y == 0.0) | (y == 1.0)):
        raise SolverError("weighted logistic regression requires outcomes in {0, 1}")
    weights = np.asarray(weights, dtype=float).ravel()
    treated = data.treated_mask()
    if np.any(weights[treated] < 0):
        raise SolverError("weights must be nonnegative")
    omega_full = np.where(treated, weights, 0.0) / data.n
    active = omega_full > 0
    if not active.any():
        raise SolverError("total treated weight is zero")

    f_act = np.ascontiguousarray(data.f[active])
    y_act = y[active]
    om = omega_full[active]
    width = f_act.shape[1]
    penalty = np.full(width, float(lambda_alpha))
    penalty[0] = 0.0
    alpha = np.zeros(width) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    clamp_events = 0

    def objective(a):
        lin, nc = clamped_linear_predictor(f_act @ a)
        val = float(om @ (np.logaddexp(0.0, lin) - y_act * lin))
        return val + float(penalty @ np.abs(a)), nc

    fx, nc = objective(alpha)
    clamp_events = nc
    history = [fx] if settings.record_history else None
    converged = False
    kkt = np.inf
    it = 0
    while it < settings.max_iterations:
        it += 1
        lin, nc = clamped_linear_predictor(f_act @ alpha)
        clamp_events = nc
        prob = 1.0 / (1.0 + np.exp(-lin))
        curv = np.maximum(prob * (1.0 - prob), 1e-6)
        work_w = om * curv
        work_z = lin + (y_act - prob) / curv

        # one inner pass of penalized weighted least squares on the
        # quadratic surrogate, then step halving onto the true objective
        proposal = alpha.copy()
        resid = work_z - f_act @ proposal
        wf = f_act * work_w[:, None]
        col_scale = (f_act * f_act).T @ work_w
        for _ in range(8):
            max_delta = 0.0
            for j in list(range(1, width)) + [0]:
                if col_scale[j] <= 0.0:
                    continue
                rho = float(wf[:, j] @ resid) + col_scale[j] * proposal[j]
                new = float(_soft_threshold(np.asarray(rho), np.asarray(penalty[j]))) / col_scale[j]
                step = new - proposal[j]
                if step != 0.0:
                    resid -= step * f_act[:, j]
                    proposal[j] = new
                    max_delta = max(max_delta, abs(step))
            if max_delta < 1e-10:
                break

        direction = proposal - alpha
        step_size = 1.0
        f_new, nc_new = objective(alpha + direction)
        while f_new > fx + 1e-12 * max(1.0, abs(fx)) and step_size > 1e-8:
            step_size *= 0.5
            f_new, nc_new = objective(alpha + step_size * direction)
        if f_new <= fx:
            alpha = alpha + step_size * direction
            rel_change = abs(fx - f_new) / max(1.0, abs(fx))
            fx = f_new
            clamp_events = nc_new
        else:
            rel_change = 0.0
        if history is not None:
            history.append(fx)

        if rel_change < settings.tolerance:
            lin, _ = clamped_linear_predictor(f_act @ alpha)
            prob = 1.0 / (1.0 + np.exp(-lin))
            grad = (f_act * om[:, None]).T @ (prob - y_act)
            kkt = _lasso_kkt_violation(grad, alpha, penalty)
            if kkt < 10.0 * settings.tolerance:
                converged = True
                break

    if not np.isfinite(kkt):
        lin, _ = clamped_linear_predictor(f_act @ alpha)
        prob = 1.0 / (1.0 + np.exp(-lin))
        grad = (f_act * om[:, None]).T @ (prob - y_act)
        kkt = _lasso_kkt_violation(grad, alpha, penalty)
    lin, _ = clamped_linear_predictor(f_act @ alpha)
    prob = 1.0 / (1.0 + np.exp(-lin))
    if np.all(np.abs(y_act - prob) < 1e-4):
        converged = False  # separation within the weighted treated group
    diag = FitDiagnostics(it, fx, kkt, converged, clamp_events, history)
    return CoefficientVector.standard(alpha), diag
