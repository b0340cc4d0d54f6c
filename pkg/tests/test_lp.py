import numpy as np
import pytest
from scipy.optimize import linprog

from senscal.lp import LPError, solve_bounded_lp


def random_feasible_instance(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    nv = int(rng.integers(k + 1, 16))
    A = rng.normal(size=(k, nv))
    lo = rng.normal(size=nv) - 2.0
    hi = lo + np.abs(rng.normal(size=nv)) * 3.0 + 0.1
    x0 = lo + (hi - lo) * rng.random(nv)
    b = A @ x0
    c = rng.normal(size=nv)
    return A, b, c, lo, hi


def test_tiny_known_solution():
    A = np.array([[1.0, 1.0]])
    sol = solve_bounded_lp(A, [1.0], [1.0, 2.0], [0.0, 0.0], [1.0, 1.0])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(sol.x, [0.0, 1.0], atol=1e-12)


def test_bound_flip_only():
    # no constraints active in a 0-row problem is not allowed; use one trivial row
    A = np.array([[0.0, 0.0]])
    sol = solve_bounded_lp(A, [0.0], [1.0, -1.0], [-1.0, -2.0], [2.0, 5.0])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0 + 2.0)


@pytest.mark.parametrize("seed", range(40))
def test_matches_reference_solver(seed):
    A, b, c, lo, hi = random_feasible_instance(seed)
    sol = solve_bounded_lp(A, b, c, lo, hi)
    ref = linprog(-c, A_eq=A, b_eq=b, bounds=list(zip(lo, hi)), method="highs")
    assert ref.success
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(-ref.fun, abs=1e-7 * max(1.0, abs(ref.fun)))


@pytest.mark.parametrize("seed", range(12))
def test_multipliers_certify_optimality(seed):
    A, b, c, lo, hi = random_feasible_instance(100 + seed)
    sol = solve_bounded_lp(A, b, c, lo, hi)
    assert sol.status == "optimal"
    # dual feasibility: reduced costs have the right signs at each bound
    d = c - sol.row_multipliers @ A
    at_lower = np.isclose(sol.x, lo, atol=1e-7)
    at_upper = np.isclose(sol.x, hi, atol=1e-7)
    interior = ~(at_lower | at_upper)
    assert np.all(d[at_lower & ~at_upper] <= 1e-7)
    assert np.all(d[at_upper & ~at_lower] >= -1e-7)
    assert np.all(np.abs(d[interior]) <= 1e-7)
    # strong duality: c'x = y'b + sum of bound terms
    dual_obj = sol.row_multipliers @ b + np.where(d > 0, d * hi, d * lo).sum()
    assert dual_obj == pytest.approx(sol.objective, abs=1e-7 * max(1, abs(dual_obj)))


def test_detects_infeasible():
    A = np.array([[1.0, 1.0]])
    sol = solve_bounded_lp(A, [10.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0])
    assert sol.status == "infeasible"


def test_warm_start_reuses_basis():
    A, b, c, lo, hi = random_feasible_instance(7)
    sol = solve_bounded_lp(A, b, c, lo, hi)
    again = solve_bounded_lp(A, b, c, lo, hi, basis=sol.basis, vstatus=sol.vstatus)
    assert again.status == "optimal"
    assert again.objective == pytest.approx(sol.objective, abs=1e-10)
    assert again.iterations <= 2


def test_rejects_infinite_bounds():
    A = np.array([[1.0]])
    with pytest.raises(LPError):
        solve_bounded_lp(A, [0.0], [1.0], [0.0], [np.inf])


def test_degenerate_equal_bounds():
    A = np.array([[1.0, 1.0, 1.0]])
    sol = solve_bounded_lp(A, [2.0], [3.0, 1.0, 1.0],
                           [0.0, 0.0, 1.0], [1.0, 1.0, 1.0])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(3.0 + 1.0)  # x = (1, 0, 1)
