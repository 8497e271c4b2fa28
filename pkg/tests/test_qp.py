import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mesmpc.qp import (
    INFEASIBLE,
    OPTIMAL,
    ActiveSetSolver,
    QpProblem,
    kkt_residuals,
    solve_qp,
)

from oracles import enumerate_qp, random_qp


def test_unconstrained_minimum():
    sol = solve_qp(QpProblem([[1.0]], [-1.0]))
    assert sol.status == OPTIMAL
    assert sol.z_star == pytest.approx([1.0])
    assert sol.objective == pytest.approx(-0.5)
    assert sol.active_set == ()


def test_clipped_minimum():
    sol = solve_qp(QpProblem([[1.0]], [-1.0], [[1.0]], [0.5]))
    assert sol.z_star == pytest.approx([0.5])
    assert sol.active_set == (0,)
    assert sol.multipliers == pytest.approx([0.5])


def test_infeasible_detected():
    sol = solve_qp(QpProblem([[1.0]], [-1.0], [[1.0], [-1.0]], [0.5, -1.0]))
    assert sol.status == INFEASIBLE


def test_infinite_rows_ignored():
    sol = solve_qp(QpProblem([[1.0]], [-1.0], [[1.0], [-1.0]], [np.inf, np.inf]))
    assert sol.z_star == pytest.approx([1.0])


def test_rejects_indefinite_hessian():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        QpProblem([[1.0]], [np.nan])


def test_duplicate_constraints():
    # identical rows must not make the working set singular
    H = np.eye(2)
    f = np.array([-2.0, -2.0])
    G = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    w = np.array([1.0, 1.0, 2.0])
    sol = solve_qp(QpProblem(H, f, G, w))
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.z_star, [1.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("seed", range(40))
def test_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    H, f, G, w, _ = random_qp(rng)
    sol = solve_qp(QpProblem(H, f, G, w))
    expected = enumerate_qp(H, f, G, w)
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.z_star, expected, atol=1e-6)
    res = kkt_residuals(QpProblem(H, f, G, w), sol)
    assert res["primal"] <= 1e-7
    assert res["dual"] <= 1e-9
    assert res["stationarity"] <= 1e-6
    assert res["complementarity"] <= 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_warm_start_matches_cold(seed):
    rng = np.random.default_rng(100 + seed)
    H, f, G, w, _ = random_qp(rng, n_q=12)
    p = QpProblem(H, f, G, w)
    cold = solve_qp(p)
    # exact warm start, a superset and garbage
    for warm in (list(cold.active_set), list(range(12)), [3, 3, 99, -1]):
        hot = ActiveSetSolver().solve(p, warm)
        assert hot.status == OPTIMAL
        np.testing.assert_allclose(hot.z_star, cold.z_star, atol=1e-8)
    assert ActiveSetSolver().solve(p, list(cold.active_set)).iterations == 0


@pytest.mark.parametrize("seed", range(10))
def test_optimal_beats_random_feasible_points(seed):
    rng = np.random.default_rng(500 + seed)
    H, f, G, w, z0 = random_qp(rng)
    p = QpProblem(H, f, G, w)
    sol = solve_qp(p)
    for _ in range(100):
        z = z0 + rng.standard_normal(len(f))
        # pull the sample back toward the interior point until feasible
        while np.any(G @ z > w):
            z = z0 + 0.5 * (z - z0)
        assert sol.objective <= p.objective(z) + 1e-10


def test_solver_cache_reuse_with_new_rhs():
    rng = np.random.default_rng(7)
    H, f, G, w, _ = random_qp(rng, n_z=5, n_q=10)
    solver = ActiveSetSolver()
    for shift in np.linspace(-1, 1, 5):
        p = QpProblem(H, f + shift, G, w)
        np.testing.assert_allclose(
            solver.solve(p).z_star, enumerate_qp(H, f + shift, G, w), atol=1e-6
        )


def test_iteration_limit():
    rng = np.random.default_rng(3)
    H, f, G, w, _ = random_qp(rng, n_z=6, n_q=16)
    f = f + 20.0
    sol = ActiveSetSolver(max_changes=1).solve(QpProblem(H, f, G, w))
    full = solve_qp(QpProblem(H, f, G, w))
    if full.iterations > 1:
        assert sol.status == "iteration_limit"


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_kkt_conditions_property(seed):
    rng = np.random.default_rng(seed)
    H, f, G, w, _ = random_qp(rng)
    p = QpProblem(H, f, G, w)
    sol = solve_qp(p)
    assert sol.status == OPTIMAL
    res = kkt_residuals(p, sol)
    assert res["primal"] <= 1e-7 and res["stationarity"] <= 1e-6
