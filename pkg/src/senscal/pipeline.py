"""Sequential nuisance estimation with cross-validated tuning.

The estimation order is fixed: the propensity coefficients come first,
then the quantile coefficients for each side (upper uses level ``tau``,
lower uses ``1 - tau``) with inverse-probability weights from the fitted
propensity, then the mean coefficients for each side with the transformed
outcome as response.  Upstream estimates are frozen at their selected
tuning values before anything downstream is tuned, so each
cross-validation problem stays convex; the two sides share the propensity
fit and the fold partition but are tuned independently.

Tuning searches the geometric grid ``lambda_star / 2**(j*step)`` where
``lambda_star`` is the smallest penalty that zeroes every penalized
coordinate, computed from the gradient (or a subgradient selection, for
the quantile loss) of the unpenalized loss at the intercept-only optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import numpy as np

from .core import (
    CoefficientVector,
    DesignScaler,
    FittedNuisance,
    ObservedData,
    SensitivityLevel,
    clamped_linear_predictor,
    tilde_y_minus,
    tilde_y_plus,
)
from .solvers import (
    NonConvergenceError,
    SolverError,
    SolverSettings,
    fit_ml_gamma,
    fit_rcal_gamma,
    fit_wlogit_lasso,
    fit_wls_lasso,
    fit_wqr_lasso,
    quantile_weight_factor,
    quantile_weight_factor_minus,
    weighted_quantile,
)

LOSS_GAMMA_CAL = "gamma_cal"
LOSS_GAMMA_ML = "gamma_ml"
LOSS_BETA_WQR = "beta_wqr"
LOSS_ALPHA_WLS = "alpha_wls"
LOSS_ALPHA_WLOGIT = "alpha_wlogit"


class PipelineError(RuntimeError):
    """Solver failure wrapped with the estimation stage it occurred in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class TuningGrid:
    """Geometric penalty grid and fold layout for cross-validation."""

    n_points: int = 11
    divisor_exponent_step: float = 1.0
    n_folds: int = 5
    fold_seed: int = 0

    def __post_init__(self):
        if self.n_points < 1 or self.n_folds < 2:
            raise ValueError("need n_points >= 1 and n_folds >= 2")
        if self.divisor_exponent_step <= 0:
            raise ValueError("divisor_exponent_step must be positive")

    def lambdas(self, lambda_star: float) -> np.ndarray:
        j = np.arange(self.n_points)
        return lambda_star / 2.0 ** (j * self.divisor_exponent_step)


@dataclass
class CvResult:
    selected_lambda: float
    cv_curve: np.ndarray
    lambdas: np.ndarray


def _subset(data: ObservedData, idx: np.ndarray) -> ObservedData:
    return ObservedData(data.y[idx], data.t[idx], data.f[idx], data.h[idx],
                        data.binary_outcome)


def make_folds(n: int, n_folds: int, fold_seed: int) -> list[np.ndarray]:
    """Near-equal folds from a seeded permutation (counter-based stream)."""
    if n_folds > n:
        raise PipelineError("folding", f"cannot form {n_folds} folds from {n} rows")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(fold_seed)))
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, n_folds)]


def _validate_folds(data: ObservedData, folds, needs_weights, ctx) -> bool:
    for fold in folds:
        train = np.setdiff1d(np.arange(data.n), fold, assume_unique=False)
        t_train = data.t[train]
        if t_train.sum() == 0 or t_train.sum() == train.shape[0]:
            return False
        if needs_weights:
            w = ctx["weights"][train]
            if float(np.sum(np.where(t_train == 1.0, w, 0.0))) <= 0.0:
                return False
    return True


def resolve_folds(data: ObservedData, grid: TuningGrid, ctx=None, needs_weights=False):
    """Fold partition with one reshuffle on a degenerate draw, then error."""
    folds = make_folds(data.n, grid.n_folds, grid.fold_seed)
    if _validate_folds(data, folds, needs_weights, ctx):
        return folds
    folds = make_folds(data.n, grid.n_folds, grid.fold_seed + 1)
    if _validate_folds(data, folds, needs_weights, ctx):
        return folds
    raise PipelineError("folding", "a fold has an empty treated group even after reshuffle")


# ---------------------------------------------------------------------------
# Zero thresholds (lambda_star)
# ---------------------------------------------------------------------------

def compute_lambda_star(loss_id: str, data: ObservedData, context: dict | None = None) -> float:
    """Smallest penalty at which the intercept-only fit is optimal.

    Computed as the largest absolute penalized-coordinate component of the
    (sub)gradient of the unpenalized loss at the intercept-only optimum.
    For the quantile loss, the subgradient freedom on tied observations is
    resolved by the intercept stationarity equation, which certifies the
    all-zero slope solution at any penalty at or above the returned value.
    """
    ctx = context or {}
    n = data.n
    t = data.t
    treated = data.treated_mask()

    if loss_id == LOSS_GAMMA_CAL:
        n1 = data.n_treated
        w0 = (n - n1) / n1  # exp(-gamma0) at the stationary intercept
        grad = (data.f[~treated].sum(axis=0) - w0 * data.f[treated].sum(axis=0)) / n
        val = float(np.abs(grad[1:]).max(initial=0.0))
    elif loss_id == LOSS_GAMMA_ML:
        tbar = t.mean()
        grad = data.f.T @ (tbar - t) / n
        val = float(np.abs(grad[1:]).max(initial=0.0))
    elif loss_id == LOSS_BETA_WQR:
        tau = ctx["tau"]
        om = np.where(treated, ctx["weights"], 0.0) / n
        act = om > 0
        if not act.any():
            raise PipelineError("lambda_star", "total treated weight is zero")
        y_act, om_act, h_act = data.y[act], om[act], data.h[act]
        q0 = weighted_quantile(y_act, om_act, tau)
        resid = y_act - q0
        above, below, tied = resid > 0, resid < 0, resid == 0
        w_tied = float(om_act[tied].sum())
        base = tau * float(om_act[above].sum()) + (tau - 1.0) * float(om_act[below].sum())
        a0 = -base / w_tied if w_tied > 0 else 0.0
        score = tau * om_act[above] @ h_act[above] + (tau - 1.0) * om_act[below] @ h_act[below]
        if w_tied > 0:
            score = score + a0 * om_act[tied] @ h_act[tied]
        val = float(np.abs(score[1:]).max(initial=0.0))
    elif loss_id == LOSS_ALPHA_WLS:
        om = np.where(treated, ctx["weights"], 0.0) / n
        resp = np.asarray(ctx["response"], dtype=float)
        total = float(om.sum())
        if total <= 0:
            raise PipelineError("lambda_star", "total treated weight is zero")
        rbar = float(om @ resp) / total
        grad = data.f.T @ (om * (resp - rbar))
        val = float(np.abs(grad[1:]).max(initial=0.0))
    elif loss_id == LOSS_ALPHA_WLOGIT:
        om = np.where(treated, ctx["weights"], 0.0) / n
        total = float(om.sum())
        if total <= 0:
            raise PipelineError("lambda_star", "total treated weight is zero")
        mbar = float(np.clip(float(om @ data.y) / total, 1e-10, 1.0 - 1e-10))
        grad = data.f.T @ (om * (mbar - data.y))
        val = float(np.abs(grad[1:]).max(initial=0.0))
    else:
        raise ValueError(f"unknown loss id {loss_id!r}")
    return max(val, 1e-10)


# ---------------------------------------------------------------------------
# Loss-specific fit and held-out evaluation
# ---------------------------------------------------------------------------

def _fit_for_loss(loss_id, data, ctx, lam, settings, warm):
    if loss_id == LOSS_GAMMA_CAL:
        coef, diag = fit_rcal_gamma(data, lam, settings, warm_start=warm)
        return coef, diag, coef.values
    if loss_id == LOSS_GAMMA_ML:
        coef, diag = fit_ml_gamma(data, lam, settings, warm_start=warm)
        if not diag.converged:
            raise NonConvergenceError("logistic propensity fit did not converge",
                                      coefficients=coef, diagnostics=diag)
        return coef, diag, coef.values
    if loss_id == LOSS_BETA_WQR:
        state = warm if isinstance(warm, dict) else {}
        coef, diag = fit_wqr_lasso(data, ctx["weights"], ctx["tau"], lam, settings,
                                   warm_state=state)
        return coef, diag, state
    if loss_id == LOSS_ALPHA_WLS:
        coef, diag = fit_wls_lasso(data, ctx["weights"], ctx["response"], lam,
                                   settings, warm_start=warm)
        return coef, diag, coef.values
    if loss_id == LOSS_ALPHA_WLOGIT:
        coef, diag = fit_wlogit_lasso(data, ctx["weights"], lam, settings,
                                      warm_start=warm)
        if not diag.converged:
            raise NonConvergenceError("weighted logistic fit did not converge",
                                      coefficients=coef, diagnostics=diag)
        return coef, diag, coef.values
    raise ValueError(f"unknown loss id {loss_id!r}")


def heldout_loss(loss_id, data, idx, ctx, coef: CoefficientVector) -> float:
    """The fitting loss functional averaged over held-out rows ``idx``.

    Works on row slices of the parent sample directly, so a held-out fold
    may contain a single treatment arm (or a single observation).
    """
    y = data.y[idx]
    t = data.t[idx]
    n = y.shape[0]
    if loss_id == LOSS_GAMMA_CAL:
        lin, _ = clamped_linear_predictor(data.f[idx] @ coef.values)
        return float(np.sum(t * np.exp(-lin) + (1.0 - t) * lin)) / n
    if loss_id == LOSS_GAMMA_ML:
        lin, _ = clamped_linear_predictor(data.f[idx] @ coef.values)
        return float(np.sum(np.logaddexp(0.0, lin) - t * lin)) / n
    if loss_id == LOSS_BETA_WQR:
        tau = ctx["tau"]
        om = np.where(t == 1.0, ctx["weights"][idx], 0.0)
        r = y - data.h[idx] @ coef.values
        return float(om @ np.where(r >= 0, tau * r, (tau - 1.0) * r)) / n
    if loss_id == LOSS_ALPHA_WLS:
        om = np.where(t == 1.0, ctx["weights"][idx], 0.0)
        e = np.asarray(ctx["response"], dtype=float)[idx] - data.f[idx] @ coef.values
        return 0.5 * float(om @ (e * e)) / n
    if loss_id == LOSS_ALPHA_WLOGIT:
        om = np.where(t == 1.0, ctx["weights"][idx], 0.0)
        lin, _ = clamped_linear_predictor(data.f[idx] @ coef.values)
        return float(om @ (np.logaddexp(0.0, lin) - y * lin)) / n
    raise ValueError(f"unknown loss id {loss_id!r}")


def _subset_ctx(ctx, idx):
    out = {}
    for key, val in ctx.items():
        if isinstance(val, np.ndarray) and val.ndim == 1:
            out[key] = val[idx]
        else:
            out[key] = val
    return out


def cross_validate(
    loss_id: str,
    data: ObservedData,
    context: dict | None,
    grid: TuningGrid,
    settings: SolverSettings | None = None,
    folds: list[np.ndarray] | None = None,
) -> CvResult:
    """Average held-out loss over the penalty grid; ties go to the larger penalty.

    Folds come from a seeded permutation; the same loss functional used for
    fitting is evaluated on the held-out part with the in-fold coefficients.
    """
    settings = settings or SolverSettings()
    ctx = context or {}
    lam_star = compute_lambda_star(loss_id, data, ctx)
    lambdas = grid.lambdas(lam_star)
    needs_weights = loss_id in (LOSS_BETA_WQR, LOSS_ALPHA_WLS, LOSS_ALPHA_WLOGIT)
    if folds is None:
        folds = resolve_folds(data, grid, ctx, needs_weights)

    # In-fold fits at degenerate penalties (near-separable subsamples) may
    # not converge; they are evaluated at the capped iterate, whose held-out
    # loss keeps such penalties from being selected.  Only the final refit
    # at the selected penalty is held to the convergence gate, and a looser
    # tolerance is enough to rank penalties.
    settings_cv = replace(settings,
                          max_iterations=min(settings.max_iterations, 1000),
                          tolerance=max(settings.tolerance, 1e-6))

    total = np.zeros(lambdas.shape[0])
    all_idx = np.arange(data.n)
    for fold in folds:
        train_idx = np.setdiff1d(all_idx, fold)
        train = _subset(data, train_idx)
        ctx_train = _subset_ctx(ctx, train_idx)
        warm = None
        for k, lam in enumerate(lambdas):
            try:
                coef, _, warm = _fit_for_loss(loss_id, train, ctx_train, float(lam),
                                              settings_cv, warm)
            except NonConvergenceError as exc:
                coef = exc.coefficients
                warm = coef.values
            total[k] += heldout_loss(loss_id, data, fold, ctx, coef)
    curve = total / len(folds)
    # ties (within the in-fold solver noise) break toward the larger penalty
    tie_tol = 10.0 * settings_cv.tolerance * max(1.0, float(np.abs(curve).min()))
    best = int(np.flatnonzero(curve <= curve.min() + tie_tol)[0])
    return CvResult(float(lambdas[best]), curve, lambdas)


# ---------------------------------------------------------------------------
# Full sequential fits
# ---------------------------------------------------------------------------

def _stage(label):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(label, str(exc)) from exc
            return False

    return _Ctx()


def _select_and_fit(loss_id, data, ctx, grid, settings, folds, fixed_lambda):
    if fixed_lambda is not None:
        lam = float(fixed_lambda)
        curve = None
    else:
        cv = cross_validate(loss_id, data, ctx, grid, settings, folds)
        lam = cv.selected_lambda
        curve = cv
    coef, diag, _ = _fit_for_loss(loss_id, data, ctx, lam, settings, None)
    return coef, diag, lam, curve


def fit_rcal(
    data: ObservedData,
    level: SensitivityLevel,
    grid: TuningGrid | None = None,
    settings: SolverSettings | None = None,
    family: str = "Linear",
    standardize: bool = True,
    lambdas: dict | None = None,
) -> FittedNuisance:
    """Regularized calibrated estimation of the full nuisance triple.

    Stages: (1) calibrated propensity fit; (2) weighted quantile fits at
    levels ``tau`` and ``1 - tau`` with inverse-probability weights from
    stage 1; (3) weighted regressions of the transformed outcomes on the
    mean design (least squares for the linear family, logistic with the
    quantile factor folded into the weight for the logistic family).

    ``lambdas`` optionally pins any of the keys ``"gamma"``, ``"beta"``,
    ``"alpha"`` to a fixed penalty, skipping cross-validation for that
    stage.  With all penalties pinned at zero the fit solves the empirical
    calibration equations of the unpenalized problem.
    """
    return _fit_sequential(data, level, grid, settings, family, standardize,
                           lambdas, method="RCAL")


def fit_rml(
    data: ObservedData,
    level: SensitivityLevel,
    grid: TuningGrid | None = None,
    settings: SolverSettings | None = None,
    family: str = "Linear",
    standardize: bool = True,
    lambdas: dict | None = None,
) -> FittedNuisance:
    """Maximum-likelihood-style comparator fit.

    Same stage structure as :func:`fit_rcal` but with the logistic
    likelihood for the propensity model, unweighted quantile regression,
    and unweighted mean regression.
    """
    return _fit_sequential(data, level, grid, settings, family, standardize,
                           lambdas, method="RML")


def fit_levels(
    data: ObservedData,
    levels: list[SensitivityLevel],
    method: str = "RCAL",
    grid: TuningGrid | None = None,
    settings: SolverSettings | None = None,
    family: str = "Linear",
    standardize: bool = True,
    lambdas: dict | None = None,
) -> dict[float, FittedNuisance]:
    """Fits for several sensitivity levels sharing one propensity stage.

    The propensity fit does not depend on the sensitivity level, so it is
    selected and fit once; the quantile and mean stages are refit per
    level.  Returns a dict keyed by ``level.lam``.
    """
    if method not in ("RCAL", "RML"):
        raise PipelineError("setup", f"unknown method {method!r}")
    grid = grid or TuningGrid()
    settings = settings or SolverSettings()
    lambdas = lambdas or {}
    if family not in ("Linear", "Logistic"):
        raise PipelineError("setup", f"unknown outcome mean family {family!r}")
    if family == "Logistic" and not np.all((data.y == 0.0) | (data.y == 1.0)):
        raise PipelineError("setup", "logistic family requires outcomes in {0, 1}")

    f_scaler = DesignScaler.fit(data.f) if standardize else DesignScaler.identity(data.f.shape[1])
    h_scaler = DesignScaler.fit(data.h) if standardize else DesignScaler.identity(data.h.shape[1])
    sdata = ObservedData(data.y, data.t, f_scaler.transform(data.f),
                         h_scaler.transform(data.h), data.binary_outcome)

    needs_cv = any(lambdas.get(k) is None for k in ("gamma", "beta", "alpha"))
    folds = resolve_folds(sdata, grid) if needs_cv else None

    gamma_loss = LOSS_GAMMA_CAL if method == "RCAL" else LOSS_GAMMA_ML
    with _stage("gamma"):
        gamma, diag_g, lam_g, cv_g = _select_and_fit(
            gamma_loss, sdata, {}, grid, settings, folds, lambdas.get("gamma"))
        if not diag_g.converged:
            raise SolverError("propensity fit did not converge")

    if method == "RCAL":
        lin, _ = clamped_linear_predictor(sdata.f @ gamma.values)
        weights = np.exp(-lin)
    else:
        weights = np.ones(sdata.n)

    out = {}
    for level in levels:
        diagnostics = {"gamma": {"diagnostics": diag_g, "cv": cv_g}}
        sides = {}
        for side, tau_side in (("plus", level.tau), ("minus", 1.0 - level.tau)):
            if side == "minus" and level.lam == 1.0:
                # zero span: both sides are the same tau=1/2 problem
                diagnostics["beta_minus"] = diagnostics["beta_plus"]
                diagnostics["alpha_minus"] = diagnostics["alpha_plus"]
                sides["minus"] = sides["plus"]
                continue
            with _stage(f"beta_{side}"):
                ctx_b = {"weights": weights, "tau": tau_side}
                beta, diag_b, lam_b, cv_b = _select_and_fit(
                    LOSS_BETA_WQR, sdata, ctx_b, grid, settings, folds, lambdas.get("beta"))
                if not diag_b.converged:
                    raise SolverError("quantile LP certificate failed")
            diagnostics[f"beta_{side}"] = {"diagnostics": diag_b, "cv": cv_b}

            q_hat = sdata.h @ beta.values
            if side == "plus":
                response = np.asarray(tilde_y_plus(sdata.y, q_hat, level), dtype=float)
            else:
                response = np.asarray(tilde_y_minus(sdata.y, q_hat, level), dtype=float)

            with _stage(f"alpha_{side}"):
                if family == "Linear":
                    ctx_a = {"weights": weights, "response": response}
                    alpha, diag_a, lam_a, cv_a = _select_and_fit(
                        LOSS_ALPHA_WLS, sdata, ctx_a, grid, settings, folds,
                        lambdas.get("alpha"))
                else:
                    factor = (quantile_weight_factor(q_hat, level) if side == "plus"
                              else quantile_weight_factor_minus(q_hat, level))
                    ctx_a = {"weights": weights * factor}
                    alpha, diag_a, lam_a, cv_a = _select_and_fit(
                        LOSS_ALPHA_WLOGIT, sdata, ctx_a, grid, settings, folds,
                        lambdas.get("alpha"))
                if not diag_a.converged:
                    raise SolverError("outcome mean fit did not converge")
            diagnostics[f"alpha_{side}"] = {"diagnostics": diag_a, "cv": cv_a}
            sides[side] = (beta, alpha, lam_b, lam_a)

        beta_p, alpha_p, lam_bp, lam_ap = sides["plus"]
        beta_m, alpha_m, lam_bm, lam_am = sides["minus"]
        out[level.lam] = FittedNuisance(
            gamma=gamma,
            beta_plus=beta_p, beta_minus=beta_m,
            alpha_plus=alpha_p, alpha_minus=alpha_m,
            lambda_gamma=lam_g,
            lambda_beta_plus=lam_bp, lambda_beta_minus=lam_bm,
            lambda_alpha_plus=lam_ap, lambda_alpha_minus=lam_am,
            method=method,
            outcome_mean_family=family,
            f_scaler=f_scaler, h_scaler=h_scaler,
            stage_diagnostics=diagnostics,
        )
    return out


def _fit_sequential(data, level, grid, settings, family, standardize, lambdas, method):
    return fit_levels(data, [level], method, grid, settings, family,
                      standardize, lambdas)[level.lam]
