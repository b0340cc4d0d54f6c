"""Command-line interface.

Commands:

* ``analyze``     -- bounds and confidence intervals for a CSV dataset
* ``simulate``    -- replication study with coverage CSV output
* ``verify``      -- run the certification suite (duality, KKT, orderings)
* ``regen-golden``-- regenerate frozen test fixtures

Exit codes: 0 success, 1 verification failure, 2 input error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds as bounds_mod
from .core import DataError, ObservedData, SensitivityLevel
from .pipeline import PipelineError, TuningGrid, fit_levels
from .simulation import DgpSpec, SimulationError, run_replications
from .solvers import SolverError, SolverSettings

SCHEMA_ID = "senscal-report/1"

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


class InputError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    """Resolved configuration of one ``analyze`` run."""

    dataset: str
    outcome: str
    treatment: str
    covariates: list
    interactions: bool
    min_nonzero: int
    lambdas: list
    confidence: float
    method: str  # rcal | rcal-relaxed | rml
    family: str  # linear | logistic
    grid_points: int
    grid_step: float
    folds: int
    seed: int
    output: str
    threads: int = 1
    estimands: list = field(default_factory=lambda: ["Mu1", "Mu0", "ATE", "ATT"])

    def __post_init__(self):
        if any(lam < 1.0 for lam in self.lambdas):
            raise InputError("every sensitivity value must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise InputError("confidence must lie in (0, 1)")
        if self.min_nonzero < 0:
            raise InputError("min-nonzero threshold must be >= 0")
        if self.method not in ("rcal", "rcal-relaxed", "rml"):
            raise InputError(f"unknown method {self.method!r}")
        if self.family not in ("linear", "logistic"):
            raise InputError(f"unknown outcome family {self.family!r}")


# ---------------------------------------------------------------------------
# Dataset ingestion
# ---------------------------------------------------------------------------

def read_dataset(path: str, outcome: str, treatment: str, covariates=None):
    """Strict CSV reader: header required, numeric cells, no missing values."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file (header required)") from None
        header = [name.strip() for name in header]
        for col in (outcome, treatment):
            if col not in header:
                raise InputError(f"{path}: column {col!r} not found in header")
        if covariates is None:
            covariates = [c for c in header if c not in (outcome, treatment)]
        for col in covariates:
            if col not in header:
                raise InputError(f"{path}: covariate column {col!r} not found")
        idx = {name: k for k, name in enumerate(header)}
        wanted = [outcome, treatment] + list(covariates)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: line {line_no}: expected "
                                 f"{len(header)} fields, got {len(row)}")
            vals = []
            for col in wanted:
                cell = row[idx[col]].strip()
                if cell == "":
                    raise InputError(f"{path}: line {line_no}: missing value "
                                     f"in column {col!r}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InputError(f"{path}: line {line_no}: non-numeric "
                                     f"value {cell!r} in column {col!r}") from None
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2:], list(covariates)


def expand_interactions(X: np.ndarray, names: list, min_nonzero: int):
    """Append all pairwise products, dropping sparse expanded columns.

    Any expanded column (main effect or interaction) with fewer than
    ``min_nonzero`` nonzero entries is dropped.
    """
    cols = [X[:, j] for j in range(X.shape[1])]
    out_names = list(names)
    for j in range(X.shape[1]):
        for k in range(j + 1, X.shape[1]):
            cols.append(X[:, j] * X[:, k])
            out_names.append(f"{names[j]}*{names[k]}")
    mat = np.column_stack(cols)
    keep = np.count_nonzero(mat, axis=0) >= min_nonzero
    return mat[:, keep], [nm for nm, kp in zip(out_names, keep) if kp]


def build_data(config: AnalysisConfig):
    y, t, X, names = read_dataset(config.dataset, config.outcome,
                                  config.treatment,
                                  config.covariates or None)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise InputError(f"{config.dataset}: treatment column "
                         f"{config.treatment!r} must be binary 0/1")
    if config.interactions:
        X, names = expand_interactions(X, names, config.min_nonzero)
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    binary = bool(np.all((y == 0.0) | (y == 1.0)))
    try:
        data = ObservedData(y, t, design, design, binary_outcome=binary)
    except DataError as exc:
        raise InputError(f"{config.dataset}: {exc}") from exc
    return data, names


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def run_analysis(config: AnalysisConfig) -> dict:
    data, names = build_data(config)
    levels = [SensitivityLevel(lam) for lam in config.lambdas]
    grid = TuningGrid(n_points=config.grid_points,
                      divisor_exponent_step=config.grid_step,
                      n_folds=config.folds, fold_seed=config.seed)
    settings = SolverSettings()
    family = "Logistic" if config.family == "logistic" else "Linear"
    fit_method = "RML" if config.method == "rml" else "RCAL"
    relaxed = config.method == "rcal-relaxed"

    fits1 = fit_levels(data, levels, fit_method, grid, settings, family=family)
    flipped = bounds_mod.flip_for_mu0(data)
    fits0 = fit_levels(flipped, levels, fit_method, grid, settings, family=family)

    reports = []
    for level in levels:
        fit1 = fits1[level.lam]
        fit0 = fits0[level.lam]
        for side in ("Lower", "Upper", "TwoSided"):
            if "Mu1" in config.estimands:
                reports.append(bounds_mod.variance_and_ci(
                    data, fit1, level, side, config.confidence, relaxed))
            if "Mu0" in config.estimands:
                reports.append(bounds_mod.mu0_report(
                    data, fit0, level, side, config.confidence, relaxed))
            if "ATE" in config.estimands:
                reports.append(bounds_mod.ate_report(
                    data, fit1, fit0, level, side, config.confidence, relaxed))
            if "ATT" in config.estimands:
                reports.append(bounds_mod.att_report(
                    data, fit0, level, side, config.confidence, relaxed))

    def fit_summary(fits):
        out = {}
        for lam, fit in fits.items():
            stages = {}
            for stage, info in fit.stage_diagnostics.items():
                diag = info["diagnostics"]
                stages[stage] = {
                    "iterations": diag.iterations_used,
                    "objective": diag.final_objective,
                    "kkt_max_violation": diag.kkt_max_violation,
                    "converged": diag.converged,
                    "clamp_events": diag.clamp_events,
                }
            out[str(lam)] = {
                "lambda_gamma": fit.lambda_gamma,
                "lambda_beta_plus": fit.lambda_beta_plus,
                "lambda_beta_minus": fit.lambda_beta_minus,
                "lambda_alpha_plus": fit.lambda_alpha_plus,
                "lambda_alpha_minus": fit.lambda_alpha_minus,
                "stages": stages,
            }
        return out

    resolved = asdict(config)
    resolved["covariate_columns_used"] = names
    return {
        "schema": SCHEMA_ID,
        "config": resolved,
        "n": data.n,
        "n_treated": data.n_treated,
        "reports": [rep.to_dict() for rep in reports],
        "fits": {"mu1": fit_summary(fits1), "mu0": fit_summary(fits0)},
    }


def cmd_analyze(args) -> int:
    try:
        config = AnalysisConfig(
            dataset=args.data, outcome=args.outcome, treatment=args.treatment,
            covariates=_split(args.covariates), interactions=args.interactions,
            min_nonzero=args.min_nonzero,
            lambdas=[float(v) for v in _split(args.lambdas)],
            confidence=args.confidence, method=args.method, family=args.family,
            grid_points=args.grid_points, grid_step=args.grid_step,
            folds=args.folds, seed=args.seed, output=args.out,
            threads=args.threads,
        )
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        payload = run_analysis(config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PipelineError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    text = json.dumps(payload, indent=2, sort_keys=True)
    if config.output == "-":
        print(text)
    else:
        with open(config.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _split(value):
    if value is None or value == "":
        return []
    return [part.strip() for part in str(value).split(",") if part.strip()]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        dgp = DgpSpec(args.config, args.n, args.p, args.seed)
        methods = _split(args.methods)
        lambdas = [float(v) for v in _split(args.lambdas)]
        if not methods or not lambdas:
            raise InputError("need at least one method and one sensitivity value")
        grid = TuningGrid(n_points=args.grid_points,
                          divisor_exponent_step=args.grid_step,
                          n_folds=args.folds, fold_seed=args.seed)
        report = run_replications(dgp, methods, lambdas, args.reps, grid,
                                  SolverSettings(), base_seed=args.seed,
                                  threads=args.threads,
                                  true_bound_mc=args.true_bound_mc)
    except (InputError, ValueError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PipelineError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report.write_coverage_csv(f"{args.out_prefix}_coverage.csv")
    report.write_replicates_csv(f"{args.out_prefix}_replicates.csv")
    n_failed = len({f["replicate"] for f in report.failures})
    print(f"completed {report.n_completed}/{args.reps} replicates "
          f"({n_failed} failed); wrote {args.out_prefix}_coverage.csv "
          f"and {args.out_prefix}_replicates.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verification import run_verification_suite

    results = run_verification_suite(instances=args.instances, n_max=args.nmax,
                                     seed=args.seed)
    width = max(len(r["name"]) for r in results)
    all_ok = True
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        all_ok = all_ok and r["passed"]
        print(f"{r['name']:<{width}}  {status}  {r['detail']}")
    print("verification:", "PASS" if all_ok else "FAIL")
    return EXIT_OK if all_ok else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# regen-golden
# ---------------------------------------------------------------------------

def cmd_regen_golden(args) -> int:
    from .golden import regenerate_golden

    paths = regenerate_golden(args.out_dir)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="senscal",
        description="Sensitivity bounds for average treatment effects "
                    "under bounded unmeasured confounding.")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="bounds and intervals for a CSV dataset")
    pa.add_argument("--data", required=True)
    pa.add_argument("--outcome", required=True)
    pa.add_argument("--treatment", required=True)
    pa.add_argument("--covariates", default="",
                    help="comma-separated columns; default: all other columns")
    pa.add_argument("--interactions", action="store_true",
                    help="add all two-way interaction columns")
    pa.add_argument("--min-nonzero", type=int, default=0,
                    help="drop expanded columns with fewer nonzero entries")
    pa.add_argument("--lambdas", default="1,1.2,1.5,2")
    pa.add_argument("--confidence", type=float, default=0.9)
    pa.add_argument("--method", default="rcal-relaxed",
                    choices=["rcal", "rcal-relaxed", "rml"])
    pa.add_argument("--family", default="linear", choices=["linear", "logistic"])
    pa.add_argument("--grid-points", type=int, default=11)
    pa.add_argument("--grid-step", type=float, default=1.0)
    pa.add_argument("--folds", type=int, default=5)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--threads", type=int, default=1)
    pa.add_argument("--out", default="-", help="output JSON path ('-' = stdout)")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="replication study with coverage output")
    ps.add_argument("--config", required=True, choices=["C1", "C2", "C3"])
    ps.add_argument("--n", type=int, default=800)
    ps.add_argument("--p", type=int, default=10)
    ps.add_argument("--reps", type=int, default=500)
    ps.add_argument("--methods", "--method", default="rcal-relaxed,rml")
    ps.add_argument("--lambdas", "--lambda", default="1,1.5,2")
    ps.add_argument("--grid-points", type=int, default=11)
    ps.add_argument("--grid-step", type=float, default=1.0)
    ps.add_argument("--folds", type=int, default=5)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--threads", type=int, default=max(1, os.cpu_count() or 1))
    ps.add_argument("--true-bound-mc", type=int, default=1_000_000)
    ps.add_argument("--out-prefix", default="senscal_sim")
    ps.set_defaults(func=cmd_simulate)

    pv = sub.add_parser("verify", help="run the certification suite")
    pv.add_argument("--instances", type=int, default=200)
    pv.add_argument("--nmax", type=int, default=60)
    pv.add_argument("--seed", type=int, default=0)
    pv.set_defaults(func=cmd_verify)

    pg = sub.add_parser("regen-golden", help="regenerate frozen test fixtures")
    pg.add_argument("--out-dir", default="tests/golden")
    pg.set_defaults(func=cmd_regen_golden)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
