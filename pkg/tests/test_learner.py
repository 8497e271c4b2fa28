import functools

import numpy as np
import pytest

from mesmpc.experiment import make_loop, mes_state, run_scenario, uncertainty_map, window_costs
from mesmpc.learner import (
    ELEMENTWISE,
    PHYSICAL,
    CostSpec,
    LearningConfig,
    LearningError,
    UncertaintyMap,
    error_velocity,
    evaluate_cost,
    rebuild_model,
    run_algorithm_one,
)
from mesmpc.lti import DiscreteStateSpace
from mesmpc.qp import INFEASIBLE, ActiveSetSolver, QpSolution
from mesmpc.servo import ServoParams, build_servo_model, get_scenario, servo_condensed

DT = 0.1


def short(name="single", **kw):
    kw.setdefault("N_E", 40)
    kw.setdefault("max_iterations", 4)
    kw.setdefault("q_nominal", 1.0)
    return get_scenario(name, **kw)


def test_cost_of_zero_window():
    assert evaluate_cost(CostSpec(942), np.zeros(942), np.zeros(942), DT) == 0.0


@pytest.mark.parametrize("c", [0.3, -2.0, 7.5])
def test_cost_of_constant_error(c):
    n = 942
    q = evaluate_cost(CostSpec(n), np.full(n, c), np.zeros(n), DT)
    assert q == pytest.approx(n * c * c, rel=1e-13)


def test_cost_rejects_wrong_length():
    with pytest.raises(ValueError):
        evaluate_cost(CostSpec(10), np.zeros(9), np.zeros(9), DT)
    with pytest.raises(ValueError):
        CostSpec(1)


def test_cost_terms_and_weights():
    e1 = np.array([1.0, 2.0, 4.0])
    e2 = np.array([0.5, 0.0, -0.5])
    q = evaluate_cost(CostSpec(3, 2.0, 3.0, 4.0), e1, e2, 1.0, prior=1.0)
    assert q == pytest.approx(2 * 21 + 3 * (0 + 1 + 4) + 4 * 0.5)


def test_velocity_of_ramp():
    e = DT * np.arange(1, 51)
    np.testing.assert_allclose(error_velocity(e, DT), 1.0, rtol=1e-12)


def test_velocity_of_constant():
    v = error_velocity(np.full(20, 3.0), DT)
    assert v[0] == pytest.approx(30.0)
    assert not np.any(v[1:])
    assert not np.any(error_velocity(np.full(20, 3.0), DT, prior=3.0))


def test_velocity_of_sinusoid():
    t = DT * np.arange(1, 200)
    v = error_velocity(np.sin(t), DT, prior=np.sin(0.0))
    # backward difference error is bounded by dt * max|second derivative|
    assert np.max(np.abs(v - np.cos(t))) <= DT * 1.0


def test_zero_correction_gives_nominal_model():
    s = get_scenario("double")
    umap = uncertainty_map(s)
    model, flagged = rebuild_model(umap, np.zeros(2))
    ref = build_servo_model(s.assumed_params)
    assert model.A.tobytes() == ref.A.tobytes()
    assert model.B.tobytes() == ref.B.tobytes()
    assert flagged == []


def test_friction_correction_enters_load_row():
    umap = uncertainty_map(get_scenario("single"))
    model, _ = rebuild_model(umap, [-70.0])
    assert model.A[1, 1] == pytest.approx(1.8, rel=1e-14)
    np.testing.assert_array_equal(model.A[3], build_servo_model(ServoParams()).A[3])


def test_floors_are_flagged():
    umap = uncertainty_map(get_scenario("double"))
    model, flagged = rebuild_model(umap, [0.0, -30.0])
    assert flagged == ["J_l"]
    assert model.A[1, 0] == pytest.approx(-1280.0 / 1e-3)


def test_elementwise_projection():
    base = DiscreteStateSpace(np.eye(2), np.ones((2, 1)), np.eye(2), dt=1.0)
    umap = UncertaintyMap(ELEMENTWISE, ("A[0,0]", "A[1,1]", "B[0,0]"), base, limits={"A": 0.5})
    D = umap.deltas([3.0, 1.0, 2.0])
    assert np.linalg.norm(D["A"], 2) == pytest.approx(0.5, rel=1e-14)
    model = umap.rebuild([3.0, 1.0, 2.0])
    assert model.B[0, 0] == 3.0
    small = umap.deltas([0.1, -0.2, 0.0])["A"]
    np.testing.assert_array_equal(small, np.diag([0.1, -0.2]))


def test_uncertainty_map_errors():
    base = DiscreteStateSpace(np.eye(2), np.ones((2, 1)), np.eye(2), dt=1.0)
    with pytest.raises(ValueError):
        UncertaintyMap(ELEMENTWISE, ("A[2,0]",), base)
    with pytest.raises(ValueError):
        UncertaintyMap(ELEMENTWISE, ("Q[0,0]",), base)
    with pytest.raises(ValueError):
        UncertaintyMap(PHYSICAL, ("nope",), ServoParams(), builder=build_servo_model)
    umap = uncertainty_map(get_scenario("single"))
    with pytest.raises(ValueError):
        rebuild_model(umap, [1.0, 2.0])
    with pytest.raises(ValueError):
        rebuild_model(umap, [np.nan])


def test_stops_after_first_window_when_threshold_is_loose():
    res = run_scenario(short(q_nominal=1e15))
    assert res.trace.iterations == 1
    assert res.trace.terminated
    assert len(res.trace.t) == 40


def test_runs_to_iteration_limit_when_threshold_is_tight():
    res = run_scenario(short(q_nominal=1e-9))
    assert res.trace.iterations == 4
    assert not res.trace.terminated
    assert len(res.trace.t) == 4 * 40
    assert len(set(res.trace.model_hash)) == 4


def test_model_changes_only_at_window_boundaries():
    s = short()
    loop = make_loop(s)
    seen = []
    orig = loop.controller.step

    def spy(x):
        seen.append(id(loop.controller.condensed))
        return orig(x)

    loop.controller.step = spy
    cfg = LearningConfig(1e-9, s.n_e, s.dt_mpc, s.max_iterations)
    factory = functools.partial(servo_condensed, tune=s.tuning, dt=s.dt_mpc)
    trace, mes = run_algorithm_one(loop, factory, mes_state(s), uncertainty_map(s), cfg)
    assert mes.h == 3
    changes = [k for k in range(1, len(seen)) if seen[k] != seen[k - 1]]
    assert changes == [40, 80, 120]


def test_learning_off_keeps_model():
    s = short()
    cfg = LearningConfig(1e-9, s.n_e, s.dt_mpc, 3, learn=False)
    factory = functools.partial(servo_condensed, tune=s.tuning, dt=s.dt_mpc)
    trace, mes = run_algorithm_one(make_loop(s), factory, mes_state(s), uncertainty_map(s), cfg)
    assert mes.h == 0
    assert len(set(trace.model_hash)) == 1


def test_deterministic():
    a = run_scenario(short("double")).trace
    b = run_scenario(short("double")).trace
    assert np.asarray(a.x).tobytes() == np.asarray(b.x).tobytes()
    assert a.Q == b.Q
    assert np.asarray(a.delta_hat).tobytes() == np.asarray(b.delta_hat).tobytes()


def test_cost_recomputed_from_trace_is_identical():
    s = short()
    res = run_scenario(s)
    assert window_costs(res.trace, s.n_e, s.dt_mpc) == res.trace.Q


class _FailingSolver(ActiveSetSolver):
    def solve(self, p, warm_start=None):
        return QpSolution(np.zeros(p.n_z), 0.0, (), INFEASIBLE, np.zeros(0), 0)


def test_solver_failure_reports_iteration():
    s = short()
    loop = make_loop(s)
    loop.controller.solver = _FailingSolver()
    cfg = LearningConfig(1e-9, s.n_e, s.dt_mpc, 2)
    factory = functools.partial(servo_condensed, tune=s.tuning, dt=s.dt_mpc)
    with pytest.raises(LearningError, match="iteration 1, step 0"):
        run_algorithm_one(loop, factory, mes_state(s), uncertainty_map(s), cfg)


def test_mismatched_sampling_time_rejected():
    s = short()
    cfg = LearningConfig(1.0, 50, s.dt_mpc)
    factory = functools.partial(servo_condensed, tune=s.tuning, dt=s.dt_mpc)
    with pytest.raises(ValueError):
        run_algorithm_one(make_loop(s), factory, mes_state(s), uncertainty_map(s), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        LearningConfig(0.0, 10, DT)
    with pytest.raises(ValueError):
        LearningConfig(1.0, 10, DT, max_iterations=0)
    assert LearningConfig(1.0, 942, DT).dt_mes == pytest.approx(94.2)
