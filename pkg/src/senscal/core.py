"""Domain types and scalar primitives shared by every estimation routine.

The package works on a fixed observational layout: an outcome vector ``y``,
a binary treatment vector ``t`` and two design matrices ``f`` (propensity
and outcome-mean models) and ``h`` (outcome-quantile models), each carrying
an intercept column of ones in position 0.  Sensitivity to unmeasured
confounding is indexed by a single odds-ratio bound ``lam >= 1``; the
derived quantile level ``tau = lam / (lam + 1)`` and the width factor
``span = lam - 1/lam`` appear throughout the bound formulas.

All containers are immutable after construction (the underlying arrays are
marked read-only), so they can be shared freely across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

# Cap on linear predictors before exponentiation.  exp(30) ~ 1.1e13 exceeds
# any meaningful inverse-probability weight; clamping at this magnitude
# prevents overflow without changing optimizer behavior at realistic scales.
LINEAR_PREDICTOR_CAP = 30.0


class DataError(ValueError):
    """Raised when an input container violates its structural invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=float))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SensitivityLevel:
    """Odds-ratio bound ``lam`` with its derived quantities.

    Attributes
    ----------
    lam : float
        Maximal odds-ratio deviation, ``lam >= 1``.  ``lam == 1`` recovers
        the unconfounded analysis.
    tau : float
        Quantile level ``lam / (lam + 1)`` in ``[1/2, 1)``.
    span : float
        Width factor ``lam - 1/lam >= 0``.
    """

    lam: float
    tau: float = field(init=False)
    span: float = field(init=False)

    def __post_init__(self) -> None:
        lam = float(self.lam)
        if not np.isfinite(lam) or lam < 1.0:
            raise DataError(f"sensitivity parameter must be >= 1, got {lam!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "tau", lam / (lam + 1.0))
        object.__setattr__(self, "span", lam - 1.0 / lam)


@dataclass(frozen=True)
class ObservedData:
    """The sample ``{(y_i, t_i, x_i)}`` with its two design matrices.

    Parameters
    ----------
    y : (n,) array
        Outcomes.  For the logistic outcome-mean family all values must lie
        in ``{0, 1}``.
    t : (n,) array
        Treatment indicators in ``{0, 1}``; both arms must be nonempty.
    f : (n, 1+p) array
        Design matrix for the propensity and outcome-mean models; column 0
        is identically one.
    h : (n, 1+m) array
        Design matrix for the quantile models; column 0 is identically one.
    """

    y: np.ndarray
    t: np.ndarray
    f: np.ndarray
    h: np.ndarray
    binary_outcome: bool = False

    def __post_init__(self) -> None:
        y = _readonly(self.y).ravel()
        t = _readonly(self.t).ravel()
        f = _readonly(self.f)
        h = _readonly(self.h)
        n = y.shape[0]
        if t.shape[0] != n:
            raise DataError("y and t lengths differ")
        if f.ndim != 2 or h.ndim != 2 or f.shape[0] != n or h.shape[0] != n:
            raise DataError("design matrices must be n-by-(1+d)")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(f)) or not np.all(np.isfinite(h)):
            raise DataError("inputs must be finite (missing values are rejected)")
        if not np.all((t == 0.0) | (t == 1.0)):
            raise DataError("treatment indicators must be 0 or 1")
        n1 = int(t.sum())
        if n1 == 0 or n1 == n:
            raise DataError("both treatment arms must be nonempty")
        if not np.all(f[:, 0] == 1.0) or not np.all(h[:, 0] == 1.0):
            raise DataError("column 0 of f and h must be identically 1")
        if self.binary_outcome and not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("binary_outcome=True requires outcomes in {0, 1}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    def treated_mask(self) -> np.ndarray:
        return self.t == 1.0

    def flip_treatment(self) -> "ObservedData":
        """Return the same sample with ``t`` replaced by ``1 - t``.

        Estimands for the untreated-arm mean are computed by running the
        treated-arm machinery on the flipped sample; the sign flip of the
        propensity linear predictor is automatic because the propensity
        model is refit on the flipped data.
        """
        return ObservedData(self.y, 1.0 - self.t, self.f, self.h, self.binary_outcome)


@dataclass(frozen=True)
class CoefficientVector:
    """Intercept-plus-slopes coefficient vector with its penalty mask.

    Index 0 is the intercept and is never penalized; the remaining entries
    are penalized wherever ``penalized_mask`` is true.
    """

    values: np.ndarray
    penalized_mask: np.ndarray

    def __post_init__(self) -> None:
        values = _readonly(self.values).ravel()
        mask = np.asarray(self.penalized_mask, dtype=bool).ravel().copy()
        mask.flags.writeable = False
        if values.shape != mask.shape:
            raise DataError("values and penalized_mask lengths differ")
        if mask.shape[0] >= 1 and mask[0]:
            raise DataError("the intercept (index 0) must not be penalized")
        if not np.all(np.isfinite(values)):
            raise DataError("coefficients must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "penalized_mask", mask)

    @classmethod
    def standard(cls, values: np.ndarray) -> "CoefficientVector":
        """Coefficient vector with all non-intercept entries penalized."""
        values = np.asarray(values, dtype=float).ravel()
        mask = np.ones(values.shape[0], dtype=bool)
        mask[0] = False
        return cls(values, mask)

    def penalty_norm(self) -> float:
        """L1 norm over the penalized coordinates."""
        return float(np.abs(self.values[self.penalized_mask]).sum())

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DesignScaler:
    """Column standardization record for a design matrix.

    Non-intercept columns are shifted to mean 0 and scaled to variance 1;
    the intercept column is left untouched.  Keeping the record allows
    coefficients fitted on the standardized design to be mapped back to the
    original column basis.
    """

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, design: np.ndarray) -> "DesignScaler":
        design = np.asarray(design, dtype=float)
        center = design.mean(axis=0)
        scale = design.std(axis=0)
        center[0] = 0.0
        scale[0] = 1.0
        scale[scale == 0.0] = 1.0  # constant columns pass through unscaled
        return cls(_readonly(center), _readonly(scale))

    @classmethod
    def identity(cls, width: int) -> "DesignScaler":
        return cls(_readonly(np.zeros(width)), _readonly(np.ones(width)))

    def transform(self, design: np.ndarray) -> np.ndarray:
        return (np.asarray(design, dtype=float) - self.center) / self.scale

    def unscale_coefficients(self, coef: CoefficientVector) -> CoefficientVector:
        """Map coefficients from the standardized basis to the original one."""
        values = coef.values / self.scale
        values = values.copy()
        values[0] = coef.values[0] - float(np.sum(coef.values[1:] * self.center[1:] / self.scale[1:]))
        return CoefficientVector(values, coef.penalized_mask)


@dataclass(frozen=True)
class FittedNuisance:
    """The fitted nuisance triple for one estimation run.

    Holds the propensity coefficients ``gamma``, the upper/lower quantile
    coefficients ``beta_plus``/``beta_minus``, the upper/lower mean
    coefficients ``alpha_plus``/``alpha_minus``, the tuning parameters used
    for each fit, and the standardization records needed to evaluate the
    fitted functions on raw designs.  Tuning parameters are stored per side
    because the two sides are tuned independently.
    """

    gamma: CoefficientVector
    beta_plus: CoefficientVector
    beta_minus: CoefficientVector
    alpha_plus: CoefficientVector
    alpha_minus: CoefficientVector
    lambda_gamma: float
    lambda_beta_plus: float
    lambda_beta_minus: float
    lambda_alpha_plus: float
    lambda_alpha_minus: float
    method: str  # "RCAL" or "RML"
    outcome_mean_family: str  # "Linear" or "Logistic"
    f_scaler: DesignScaler
    h_scaler: DesignScaler
    stage_diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in ("RCAL", "RML"):
            raise DataError(f"unknown method label {self.method!r}")
        if self.outcome_mean_family not in ("Linear", "Logistic"):
            raise DataError(f"unknown outcome mean family {self.outcome_mean_family!r}")
        for lam in (self.lambda_gamma, self.lambda_beta_plus, self.lambda_beta_minus,
                    self.lambda_alpha_plus, self.lambda_alpha_minus):
            if lam < 0:
                raise DataError("tuning parameters must be nonnegative")

    def designs_for(self, data: ObservedData) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(f, h)`` in the basis the coefficients were fitted on."""
        return self.f_scaler.transform(data.f), self.h_scaler.transform(data.h)


# ---------------------------------------------------------------------------
# Scalar primitives
# ---------------------------------------------------------------------------

def check_loss(y, u, tau: float):
    """Asymmetric absolute loss ``tau*(y-u)_+ + (1-tau)*(u-y)_+``.

    Convex and 1-Lipschitz in ``u``; zero exactly at ``u == y``.  Accepts
    scalars or arrays (broadcasting).
    """
    if not 0.0 < tau < 1.0:
        raise DataError(f"quantile level must lie in (0, 1), got {tau!r}")
    d = np.asarray(y, dtype=float) - np.asarray(u, dtype=float)
    out = np.where(d >= 0.0, tau * d, (tau - 1.0) * d)
    if out.ndim == 0:
        return float(out)
    return out


def tilde_y_plus(y, q, level: SensitivityLevel):
    """Upward-transformed outcome ``y + span * check_loss(y, q, tau)``.

    Equals ``y`` exactly when ``lam == 1`` (zero span).
    """
    return y + level.span * check_loss(y, q, level.tau)


def tilde_y_minus(y, q, level: SensitivityLevel):
    """Downward-transformed outcome ``y - span * check_loss(y, q, 1 - tau)``.

    Equals ``y`` exactly when ``lam == 1`` (zero span).
    """
    return y - level.span * check_loss(y, q, 1.0 - level.tau)


def clamped_linear_predictor(lp: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip a linear predictor to the overflow guard, counting clamp events."""
    lp = np.asarray(lp, dtype=float)
    n_clamped = int(np.count_nonzero(np.abs(lp) > LINEAR_PREDICTOR_CAP))
    if n_clamped:
        lp = np.clip(lp, -LINEAR_PREDICTOR_CAP, LINEAR_PREDICTOR_CAP)
    return lp, n_clamped


def propensity(f_rows: np.ndarray, gamma: CoefficientVector):
    """Logistic propensity ``1 / (1 + exp(-f' gamma))``.

    The inverse weight ``(1 - pi) / pi`` equals ``exp(-f' gamma)`` exactly;
    use :func:`inverse_weight` when that quantity is needed.  Linear
    predictors beyond the overflow guard are clamped.
    """
    lp, _ = clamped_linear_predictor(np.asarray(f_rows, dtype=float) @ gamma.values)
    out = 1.0 / (1.0 + np.exp(-lp))
    if out.ndim == 0:
        return float(out)
    return out


def inverse_weight(f_rows: np.ndarray, gamma: CoefficientVector):
    """Inverse-probability weight ``(1 - pi)/pi = exp(-f' gamma)``, clamped."""
    lp, _ = clamped_linear_predictor(np.asarray(f_rows, dtype=float) @ gamma.values)
    out = np.exp(-lp)
    if out.ndim == 0:
        return float(out)
    return out
