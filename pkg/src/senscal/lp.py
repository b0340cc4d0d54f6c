"""Dense bounded-variable linear programming via the revised simplex method.

Solves problems of the form

    maximize    c' x
    subject to  A x = b,      lower <= x <= upper,

with all bounds finite.  The solver maintains an explicit basis inverse
with periodic refactorization, uses a composite (artificial-free) phase 1
that minimizes total bound violation with long steps through breakpoints,
and falls back to Bland's rule when stalling is detected, which guarantees
termination on degenerate instances.

Returned solutions are vertex solutions: the simplex multipliers ``y``
satisfy ``y' A_B = c_B`` exactly for the final basis, so primal and dual
objectives agree to rounding error.  Warm starts accept a basis and
variable-status vector from a previous solve on a problem with the same
constraint matrix (bounds and costs may change).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AT_LOWER = 0
AT_UPPER = 1
BASIC = 2

_REFACTOR_EVERY = 100
_STALL_LIMIT = 1000  # nondecreasing-objective pivots before switching to Bland


class LPError(RuntimeError):
    """Internal linear-programming failure (singular basis, cycling, ...)."""


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    row_multipliers: np.ndarray
    status: str  # "optimal" | "infeasible" | "iteration_limit"
    iterations: int
    basis: np.ndarray
    vstatus: np.ndarray  # per-variable AT_LOWER / AT_UPPER / BASIC


def solve_bounded_lp(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    *,
    basis: np.ndarray | None = None,
    vstatus: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int | None = None,
) -> LPSolution:
    A = np.ascontiguousarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    k, n_real = A.shape
    if b.shape[0] != k or c.shape[0] != n_real:
        raise LPError("inconsistent LP dimensions")
    if np.any(lower > upper + 1e-15):
        raise LPError("lower bound exceeds upper bound")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise LPError("all variable bounds must be finite")

    # Structural slots fixed at zero guarantee an invertible starting basis.
    n = n_real + k
    A_full = np.empty((k, n))
    A_full[:, :n_real] = A
    A_full[:, n_real:] = np.eye(k)
    cost = np.concatenate([c, np.zeros(k)])
    lo = np.concatenate([lower, np.zeros(k)])
    hi = np.concatenate([upper, np.zeros(k)])

    if basis is None:
        basis = np.arange(n_real, n, dtype=np.intp)
        vstatus = np.full(n, AT_LOWER, dtype=np.int8)
        vstatus[basis] = BASIC
    else:
        basis = np.asarray(basis, dtype=np.intp).copy()
        vstatus = np.asarray(vstatus, dtype=np.int8).copy()
        if vstatus.shape[0] == n_real:  # caller unaware of structural slots
            vstatus = np.concatenate([vstatus, np.full(k, AT_LOWER, dtype=np.int8)])
        if basis.shape[0] != k or vstatus.shape[0] != n:
            raise LPError("warm-start basis has wrong shape")
        vstatus[basis] = BASIC

    if max_iter is None:
        max_iter = 200 * (k + n) + 2000

    try:
        B_inv = np.linalg.inv(A_full[:, basis])
    except np.linalg.LinAlgError as exc:
        raise LPError("singular starting basis") from exc

    def nonbasic_values() -> np.ndarray:
        x_n = np.where(vstatus == AT_UPPER, hi, lo)
        x_n[basis] = 0.0
        return x_n

    def recompute_xb() -> np.ndarray:
        x_n = nonbasic_values()
        return B_inv @ (b - A_full @ x_n)

    x_b = recompute_xb()
    iters = 0
    pivots_since_refactor = 0
    stall = 0
    feas_tol = max(tol, 1e-11)

    while True:
        if iters >= max_iter:
            return _package(A_full, cost, lo, hi, basis, vstatus, x_b, B_inv,
                            n_real, "iteration_limit", iters)
        iters += 1

        lo_b = lo[basis]
        hi_b = hi[basis]
        below = lo_b - x_b
        above = x_b - hi_b
        infeas = max(float(below.max(initial=0.0)), float(above.max(initial=0.0)))
        phase1 = infeas > feas_tol

        if phase1:
            g = np.where(below > feas_tol, -1.0, 0.0) + np.where(above > feas_tol, 1.0, 0.0)
            y = -(g @ B_inv)
            d = -(y @ A_full)
        else:
            y = cost[basis] @ B_inv
            d = cost - y @ A_full

        movable = (vstatus != BASIC) & (lo < hi)
        enter_up = movable & (vstatus == AT_LOWER) & (d > tol)
        enter_dn = movable & (vstatus == AT_UPPER) & (d < -tol)
        candidates = enter_up | enter_dn
        if not candidates.any():
            if phase1:
                return _package(A_full, cost, lo, hi, basis, vstatus, x_b, B_inv,
                                n_real, "infeasible", iters)
            if pivots_since_refactor > 0:
                # fresh factorization so the reported multipliers carry no
                # product-form drift
                try:
                    B_inv = np.linalg.inv(A_full[:, basis])
                except np.linalg.LinAlgError as exc:
                    raise LPError("singular basis at optimum") from exc
                x_b = recompute_xb()
            return _package(A_full, cost, lo, hi, basis, vstatus, x_b, B_inv,
                            n_real, "optimal", iters)

        if stall > _STALL_LIMIT:
            j_in = int(np.flatnonzero(candidates)[0])  # Bland
        else:
            scores = np.where(candidates, np.abs(d), -np.inf)
            j_in = int(np.argmax(scores))
        s = 1.0 if vstatus[j_in] == AT_LOWER else -1.0

        w = B_inv @ A_full[:, j_in]
        dxb = -s * w  # basic change per unit step of the entering variable
        t_enter = hi[j_in] - lo[j_in]

        if phase1:
            t_step, r_leave, leave_to_upper = _phase1_ratio(
                x_b, dxb, lo_b, hi_b, t_enter, feas_tol, -abs(float(d[j_in])))
        else:
            t_step, r_leave, leave_to_upper = _phase2_ratio(
                x_b, dxb, lo_b, hi_b, t_enter, feas_tol)

        if t_step <= feas_tol:
            stall += 1
        else:
            stall = 0

        if r_leave is None:
            # bound flip: entering variable crosses to its opposite bound
            x_b = x_b + dxb * t_step
            vstatus[j_in] = AT_UPPER if vstatus[j_in] == AT_LOWER else AT_LOWER
            continue

        j_out = int(basis[r_leave])
        x_b = x_b + dxb * t_step
        entering_value = (lo[j_in] if s > 0 else hi[j_in]) + s * t_step

        # pivot: replace leaving row's basic variable with the entering one
        vstatus[j_out] = AT_UPPER if leave_to_upper else AT_LOWER
        vstatus[j_in] = BASIC
        basis[r_leave] = j_in
        x_b[r_leave] = entering_value

        pivots_since_refactor += 1
        if pivots_since_refactor >= _REFACTOR_EVERY:
            try:
                B_inv = np.linalg.inv(A_full[:, basis])
            except np.linalg.LinAlgError as exc:
                raise LPError("singular basis during refactorization") from exc
            pivots_since_refactor = 0
            x_b = recompute_xb()
        else:
            # product-form update of the basis inverse
            piv = w[r_leave]
            if abs(piv) < 1e-12:
                try:
                    B_inv = np.linalg.inv(A_full[:, basis])
                except np.linalg.LinAlgError as exc:
                    raise LPError("singular pivot") from exc
                pivots_since_refactor = 0
                x_b = recompute_xb()
            else:
                row = B_inv[r_leave, :] / piv
                B_inv -= np.outer(w, row)
                B_inv[r_leave, :] = row


def _phase2_ratio(x_b, dxb, lo_b, hi_b, t_enter, feas_tol):
    """Harris-style bounded-variable ratio test.

    A small amount of bound violation (a tenth of the feasibility
    tolerance) is allowed so that ties can be broken toward the largest
    pivot magnitude, which keeps the basis well conditioned on degenerate
    problems.
    """
    room = 0.1 * feas_tol
    ratios = np.full(x_b.shape[0], np.inf)
    to_upper = np.zeros(x_b.shape[0], dtype=bool)
    neg = dxb < -feas_tol
    pos = dxb > feas_tol
    ratios[neg] = (lo_b[neg] - x_b[neg]) / dxb[neg]
    ratios[pos] = (hi_b[pos] - x_b[pos]) / dxb[pos]
    to_upper[pos] = True
    np.maximum(ratios, 0.0, out=ratios)

    active = np.isfinite(ratios)
    if not active.any():
        return t_enter, None, False
    relaxed = ratios.copy()
    relaxed[active] += room / np.abs(dxb[active])
    t_max = float(relaxed.min())
    if t_max >= t_enter - 1e-15:
        return t_enter, None, False
    near = np.flatnonzero(ratios <= t_max)
    r_best = int(near[np.argmax(np.abs(dxb[near]))])
    return float(ratios[r_best]), r_best, bool(to_upper[r_best])


def _phase1_ratio(x_b, dxb, lo_b, hi_b, t_enter, feas_tol, slope0):
    """Long-step phase-1 ratio test.

    The infeasibility sum is piecewise linear in the step; every bound
    crossed by a basic variable adds ``|dxb_i|`` to its slope.  Walk the
    sorted breakpoints while the slope stays negative, then stop at the
    blocking one.  The entering variable's own bound is a hard stop.
    """
    moving = np.abs(dxb) > feas_tol
    if not moving.any():
        return t_enter, None, False
    idx = np.flatnonzero(moving)
    di = dxb[idx]
    xi = x_b[idx]
    lo_i = lo_b[idx]
    hi_i = hi_b[idx]
    up_dir = di > 0

    # each moving basic yields up to two bound crossings ahead of it
    t_lo = np.where(
        up_dir,
        np.where(xi < lo_i - feas_tol, (lo_i - xi) / di, np.inf),
        np.where(xi >= lo_i - feas_tol, np.maximum((lo_i - xi) / di, 0.0), np.inf),
    )
    t_hi = np.where(
        up_dir,
        np.where(xi <= hi_i + feas_tol, np.maximum((hi_i - xi) / di, 0.0), np.inf),
        np.where(xi > hi_i + feas_tol, (hi_i - xi) / di, np.inf),
    )
    events_t = np.concatenate([t_lo, t_hi])
    events_r = np.concatenate([idx, idx])
    events_up = np.concatenate([np.zeros(idx.size, dtype=bool),
                                np.ones(idx.size, dtype=bool)])
    keep = events_t < t_enter - 1e-15
    if not keep.any():
        return t_enter, None, False
    events_t = events_t[keep]
    events_r = events_r[keep]
    events_up = events_up[keep]

    order = np.argsort(events_t, kind="stable")
    slopes = slope0 + np.cumsum(np.abs(dxb[events_r[order]]))
    hit = np.flatnonzero(slopes >= -1e-12)
    if hit.size == 0:
        return t_enter, None, False
    pos = order[hit[0]]
    return max(float(events_t[pos]), 0.0), int(events_r[pos]), bool(events_up[pos])


def _package(A_full, cost, lo, hi, basis, vstatus, x_b, B_inv, n_real, status, iters):
    n = cost.shape[0]
    x = np.where(vstatus == AT_UPPER, hi, lo).astype(float)
    x[basis] = x_b
    y = cost[basis] @ B_inv
    return LPSolution(
        x=x[:n_real],
        objective=float(cost[:n_real] @ x[:n_real]),
        row_multipliers=np.asarray(y, dtype=float),
        status=status,
        iterations=iters,
        basis=basis.copy(),
        vstatus=vstatus.copy(),
    )
