"""Estimating functions, point bounds, variances, and confidence intervals.

The per-observation estimating functions are

    phi_plus  = T (y - yt_plus)  + (T/pi) yt_plus  - (T/pi - 1) eta_plus
    phi_minus = T (y - yt_minus) + (T/pi) yt_minus - (T/pi - 1) eta_minus

where ``yt_plus`` / ``yt_minus`` are the transformed outcomes at the fitted
quantile predictor and ``eta`` is the fitted mean of the transformed
outcome.  Sample means of ``phi_plus`` / ``phi_minus`` are the upper / lower
point bounds for the treated-arm mean; at ``lam == 1`` both reduce to the
standard augmented IPW estimator.  The relaxed variants add the penalty
term ``span * lambda_beta * ||beta_slopes||_1``, which restores exact
monotonicity of the sample bound in the quantile penalty.

Untreated-arm estimands run the same machinery on the treatment-flipped
sample; effect estimands combine the two per-unit arrays so that variances
come from the differenced estimating function.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.special import ndtri

from .core import (
    CoefficientVector,
    FittedNuisance,
    ObservedData,
    SensitivityLevel,
    check_loss,
    clamped_linear_predictor,
    tilde_y_minus,
    tilde_y_plus,
)

ESTIMANDS = ("Mu1", "Mu0", "ATE", "ATT")
SIDES = ("Lower", "Upper", "TwoSided")


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class BoundReport:
    """One estimand at one sensitivity level, with its interval."""

    estimand: str
    side: str
    lam: float
    point: object  # float, or (lower, upper) pair for TwoSided
    variance: object  # float, or pair for TwoSided
    ci: tuple
    relaxed: bool
    method: str  # "RCAL" | "RCAL-relaxed" | "RML"
    n: int
    confidence: float

    def to_dict(self) -> dict:
        def _clean(v):
            if isinstance(v, tuple):
                return [_clean(x) for x in v]
            if isinstance(v, float) and not np.isfinite(v):
                return "-inf" if v < 0 else "inf"
            return v

        return {
            "estimand": self.estimand,
            "side": self.side,
            "lambda": self.lam,
            "point": _clean(self.point),
            "variance": _clean(self.variance),
            "ci": _clean(self.ci),
            "relaxed": self.relaxed,
            "method": self.method,
            "n": self.n,
            "confidence": self.confidence,
        }


def _z_value(prob: float) -> float:
    return float(ndtri(prob))


def _check_confidence(confidence: float) -> None:
    if not 0.0 < confidence < 1.0:
        raise BoundsError(f"confidence must lie in (0, 1), got {confidence!r}")


# ---------------------------------------------------------------------------
# Estimating-function evaluation
# ---------------------------------------------------------------------------

def eta_values(data: ObservedData, fit: FittedNuisance, level: SensitivityLevel,
               side: str) -> np.ndarray:
    """Fitted mean of the transformed outcome, per unit.

    Linear family: the linear predictor of the mean design.  Logistic
    family: the fitted probability composed with the transformed-outcome
    identity for binary outcomes, evaluated at the fitted quantile
    predictor.
    """
    f_std, h_std = fit.designs_for(data)
    alpha = fit.alpha_plus if side == "Upper" else fit.alpha_minus
    beta = fit.beta_plus if side == "Upper" else fit.beta_minus
    if fit.outcome_mean_family == "Linear":
        return f_std @ alpha.values
    lin, _ = clamped_linear_predictor(f_std @ alpha.values)
    m_hat = 1.0 / (1.0 + np.exp(-lin))
    q_hat = h_std @ beta.values
    if side == "Upper":
        loss1 = check_loss(1.0, q_hat, level.tau)
        loss0 = check_loss(0.0, q_hat, level.tau)
        return m_hat + level.span * (m_hat * loss1 + (1.0 - m_hat) * loss0)
    loss1 = check_loss(1.0, q_hat, 1.0 - level.tau)
    loss0 = check_loss(0.0, q_hat, 1.0 - level.tau)
    return m_hat - level.span * (m_hat * loss1 + (1.0 - m_hat) * loss0)


def phi_values(data: ObservedData, fit: FittedNuisance, level: SensitivityLevel,
               side: str) -> np.ndarray:
    """Per-unit estimating-function values for one side."""
    if side not in ("Lower", "Upper"):
        raise BoundsError("side must be 'Lower' or 'Upper'")
    f_std, h_std = fit.designs_for(data)
    lin, _ = clamped_linear_predictor(f_std @ fit.gamma.values)
    inv_pi = 1.0 + np.exp(-lin)  # T/pi uses 1/pi = 1 + exp(-f'gamma)
    beta = fit.beta_plus if side == "Upper" else fit.beta_minus
    q_hat = h_std @ beta.values
    if side == "Upper":
        y_t = np.asarray(tilde_y_plus(data.y, q_hat, level), dtype=float)
    else:
        y_t = np.asarray(tilde_y_minus(data.y, q_hat, level), dtype=float)
    eta = eta_values(data, fit, level, side)
    t = data.t
    return t * (data.y - y_t) + t * inv_pi * y_t - (t * inv_pi - 1.0) * eta


def phi_plus(y, t, f_row, h_row, gamma: CoefficientVector, alpha: CoefficientVector,
             beta: CoefficientVector, level: SensitivityLevel) -> float:
    """Scalar upper-side estimating function for one observation.

    Convenience form for hand checks; assumes the linear mean family and
    coefficients already on the scale of the supplied rows.
    """
    f_row = np.asarray(f_row, dtype=float)
    h_row = np.asarray(h_row, dtype=float)
    lin, _ = clamped_linear_predictor(np.asarray(f_row @ gamma.values))
    inv_pi = 1.0 + float(np.exp(-lin))
    q = float(h_row @ beta.values)
    eta = float(f_row @ alpha.values)
    y_t = float(tilde_y_plus(y, q, level))
    return t * (y - y_t) + t * inv_pi * y_t - (t * inv_pi - 1.0) * eta


def phi_minus(y, t, f_row, h_row, gamma: CoefficientVector, alpha: CoefficientVector,
              beta: CoefficientVector, level: SensitivityLevel) -> float:
    """Scalar lower-side estimating function for one observation."""
    f_row = np.asarray(f_row, dtype=float)
    h_row = np.asarray(h_row, dtype=float)
    lin, _ = clamped_linear_predictor(np.asarray(f_row @ gamma.values))
    inv_pi = 1.0 + float(np.exp(-lin))
    q = float(h_row @ beta.values)
    eta = float(f_row @ alpha.values)
    y_t = float(tilde_y_minus(y, q, level))
    return t * (y - y_t) + t * inv_pi * y_t - (t * inv_pi - 1.0) * eta


# ---------------------------------------------------------------------------
# Point bounds and intervals for the treated-arm mean
# ---------------------------------------------------------------------------

def point_bound(data: ObservedData, fit: FittedNuisance, level: SensitivityLevel,
                side: str) -> float:
    """Sample average of the estimating function for the requested side."""
    return float(phi_values(data, fit, level, side).mean())


def relaxation_term(fit: FittedNuisance, level: SensitivityLevel, side: str) -> float:
    """Penalty adjustment ``span * lambda_beta * ||beta_slopes||_1``."""
    if side == "Upper":
        return level.span * fit.lambda_beta_plus * fit.beta_plus.penalty_norm()
    return level.span * fit.lambda_beta_minus * fit.beta_minus.penalty_norm()


def relaxed_point_bound(data: ObservedData, fit: FittedNuisance,
                        level: SensitivityLevel, side: str) -> float:
    """Point bound widened by the quantile-penalty term (RCAL only)."""
    if fit.method != "RCAL":
        raise BoundsError("relaxed bounds are defined for RCAL fits only")
    base = point_bound(data, fit, level, side)
    term = relaxation_term(fit, level, side)
    return base + term if side == "Upper" else base - term


def _one_sided_report(estimand, phi, point, level, side, confidence, relaxed,
                      method, n) -> BoundReport:
    _check_confidence(confidence)
    variance = float(np.mean((phi - np.mean(phi)) ** 2))
    z = _z_value(confidence)
    half = z * np.sqrt(variance / n)
    if side == "Upper":
        ci = (-np.inf, point + half)
    else:
        ci = (point - half, np.inf)
    label = f"{method}-relaxed" if relaxed else method
    return BoundReport(estimand, side, level.lam, point, variance, ci,
                       relaxed, label, n, confidence)


def variance_and_ci(data: ObservedData, fit: FittedNuisance, level: SensitivityLevel,
                    side: str, confidence: float, relaxed: bool = False) -> BoundReport:
    """Point bound with variance and a Wald interval for the treated mean.

    One-sided reports use the ``confidence`` quantile of the standard
    normal; two-sided reports split the overall level across the two
    endpoints.  The relaxed variant shifts the point but keeps the
    unrelaxed variance, which is conservative for the relaxed target.
    """
    _check_confidence(confidence)
    if side == "TwoSided":
        lower = variance_and_ci(data, fit, level, "Lower",
                                1.0 - (1.0 - confidence) / 2.0, relaxed)
        upper = variance_and_ci(data, fit, level, "Upper",
                                1.0 - (1.0 - confidence) / 2.0, relaxed)
        label = f"{fit.method}-relaxed" if relaxed else fit.method
        return BoundReport("Mu1", "TwoSided", level.lam,
                           (lower.point, upper.point),
                           (lower.variance, upper.variance),
                           (lower.ci[0], upper.ci[1]),
                           relaxed, label, data.n, confidence)
    phi = phi_values(data, fit, level, side)
    point = float(phi.mean())
    if relaxed:
        if fit.method != "RCAL":
            raise BoundsError("relaxed bounds are defined for RCAL fits only")
        term = relaxation_term(fit, level, side)
        point = point + term if side == "Upper" else point - term
    return _one_sided_report("Mu1", phi, point, level, side, confidence,
                             relaxed, fit.method, data.n)


def flip_for_mu0(data: ObservedData) -> ObservedData:
    """Treatment-flipped sample used for untreated-arm estimands."""
    return data.flip_treatment()


# ---------------------------------------------------------------------------
# Derived estimands: Mu0, ATE, ATT
# ---------------------------------------------------------------------------

def mu0_report(data: ObservedData, fit_mu0: FittedNuisance, level: SensitivityLevel,
               side: str, confidence: float, relaxed: bool = False) -> BoundReport:
    """Bound report for the untreated-arm mean.

    ``fit_mu0`` must have been fit on the treatment-flipped sample; the
    report relabels the estimand but is otherwise the treated-arm report
    on flipped data.
    """
    flipped = flip_for_mu0(data)
    rep = variance_and_ci(flipped, fit_mu0, level, side, confidence, relaxed)
    return BoundReport("Mu0", rep.side, rep.lam, rep.point, rep.variance, rep.ci,
                       rep.relaxed, rep.method, rep.n, rep.confidence)


def ate_report(data: ObservedData, fit_mu1: FittedNuisance, fit_mu0: FittedNuisance,
               level: SensitivityLevel, side: str, confidence: float,
               relaxed: bool = False) -> BoundReport:
    """Average-treatment-effect bound from the two per-arm fits.

    The lower bound pairs the treated-arm lower side with the untreated-arm
    upper side (and conversely); the variance comes from the differenced
    per-unit estimating functions, not from summing the per-arm variances.
    """
    if side == "TwoSided":
        half_conf = 1.0 - (1.0 - confidence) / 2.0
        lower = ate_report(data, fit_mu1, fit_mu0, level, "Lower", half_conf, relaxed)
        upper = ate_report(data, fit_mu1, fit_mu0, level, "Upper", half_conf, relaxed)
        label = f"{fit_mu1.method}-relaxed" if relaxed else fit_mu1.method
        return BoundReport("ATE", "TwoSided", level.lam,
                           (lower.point, upper.point), (lower.variance, upper.variance),
                           (lower.ci[0], upper.ci[1]), relaxed, label, data.n, confidence)
    flipped = flip_for_mu0(data)
    if side == "Lower":
        phi1 = phi_values(data, fit_mu1, level, "Lower")
        phi0 = phi_values(flipped, fit_mu0, level, "Upper")
    else:
        phi1 = phi_values(data, fit_mu1, level, "Upper")
        phi0 = phi_values(flipped, fit_mu0, level, "Lower")
    diff = phi1 - phi0
    point = float(diff.mean())
    if relaxed:
        side1 = "Lower" if side == "Lower" else "Upper"
        side0 = "Upper" if side == "Lower" else "Lower"
        adjust = relaxation_term(fit_mu1, level, side1) + relaxation_term(fit_mu0, level, side0)
        point = point - adjust if side == "Lower" else point + adjust
    return _one_sided_report("ATE", diff, point, level, side, confidence,
                             relaxed, fit_mu1.method, data.n)


def att_report(data: ObservedData, fit_mu0: FittedNuisance, level: SensitivityLevel,
               side: str, confidence: float, relaxed: bool = False) -> BoundReport:
    """Treatment-effect-on-the-treated bound via the transfer formula.

    The treated-arm component is the plain treated average; the untreated
    counterfactual transfers from the untreated-arm bound as
    ``(mu0_bound - mean((1-T) y)) / mean(T)``.  The variance uses the
    differenced influence function ``(y - phi0 - T * att) / mean(T)``.
    """
    if side == "TwoSided":
        half_conf = 1.0 - (1.0 - confidence) / 2.0
        lower = att_report(data, fit_mu0, level, "Lower", half_conf, relaxed)
        upper = att_report(data, fit_mu0, level, "Upper", half_conf, relaxed)
        label = f"{fit_mu0.method}-relaxed" if relaxed else fit_mu0.method
        return BoundReport("ATT", "TwoSided", level.lam,
                           (lower.point, upper.point), (lower.variance, upper.variance),
                           (lower.ci[0], upper.ci[1]), relaxed, label, data.n, confidence)
    _check_confidence(confidence)
    tbar = float(data.t.mean())
    if tbar <= 0.0:
        raise BoundsError("no treated units")
    flipped = flip_for_mu0(data)
    phi0 = phi_values(flipped, fit_mu0, level, "Upper" if side == "Lower" else "Lower")
    mu0_val = float(phi0.mean())
    if relaxed:
        term = relaxation_term(fit_mu0, level, "Upper" if side == "Lower" else "Lower")
        mu0_val = mu0_val + term if side == "Lower" else mu0_val - term
    nu1 = float(np.mean(data.t * data.y)) / tbar
    nu0 = (mu0_val - float(np.mean((1.0 - data.t) * data.y))) / tbar
    att = nu1 - nu0
    resid = data.y - phi0 - data.t * att
    variance = float(np.mean(resid ** 2)) / tbar ** 2
    z = _z_value(confidence)
    half = z * np.sqrt(variance / data.n)
    ci = (att - half, np.inf) if side == "Lower" else (-np.inf, att + half)
    label = f"{fit_mu0.method}-relaxed" if relaxed else fit_mu0.method
    return BoundReport("ATT", side, level.lam, att, variance, ci, relaxed,
                       label, data.n, confidence)


def nu0_eta_average(data: ObservedData, fit_mu0: FittedNuisance,
                    level: SensitivityLevel, side: str) -> float:
    """Counterfactual treated mean of the untreated arm via imputation.

    ``mean(T * eta0(X)) / mean(T)``, the fitted-mean average over treated
    units; agrees with the transfer formula for calibrated fits through
    the intercept normal equation.
    """
    flipped = flip_for_mu0(data)
    eta = eta_values(flipped, fit_mu0, level, "Upper" if side == "Upper" else "Lower")
    return float(np.mean(data.t * eta)) / float(data.t.mean())
