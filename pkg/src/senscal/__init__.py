"""Point bounds and doubly robust confidence intervals for treatment
effects under bounded unmeasured confounding, with calibrated nuisance
estimation, an independent linear-programming oracle, and a simulation
harness."""

from .core import (
    CoefficientVector,
    DataError,
    DesignScaler,
    FittedNuisance,
    ObservedData,
    SensitivityLevel,
    check_loss,
    inverse_weight,
    propensity,
    tilde_y_minus,
    tilde_y_plus,
)
from .bounds import (
    BoundReport,
    ate_report,
    att_report,
    flip_for_mu0,
    mu0_report,
    phi_minus,
    phi_plus,
    point_bound,
    relaxed_point_bound,
    variance_and_ci,
)
from .pipeline import (
    PipelineError,
    TuningGrid,
    compute_lambda_star,
    cross_validate,
    fit_levels,
    fit_rcal,
    fit_rml,
)
from .solvers import (
    FitDiagnostics,
    NonConvergenceError,
    SolverError,
    SolverSettings,
    fit_ml_gamma,
    fit_rcal_gamma,
    fit_uqr_lasso,
    fit_wlogit_lasso,
    fit_wls_lasso,
    fit_wqr_lasso,
)
from .oracle import (
    PrimalBoundProblem,
    certify_duality,
    population_bound_oracle,
    solve_primal_bound,
)
from .simulation import DgpSpec, ReplicationReport, generate, run_replications, true_sharp_bounds

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
