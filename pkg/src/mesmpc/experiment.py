"""Servo scenario runs: nominal baseline cost, fixed-model runs and learning runs."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .learner import (
    PHYSICAL,
    CostSpec,
    LearningConfig,
    LearningTrace,
    TrackingLoop,
    UncertaintyMap,
    evaluate_cost,
    run_algorithm_one,
)
from .mes import DitherChannel, MesState
from .mpc import MpcController
from .servo import PlantSim, Scenario, build_servo_model, reference, servo_condensed

C_R = (1.0, 0.0)

# lower limits for learned physical parameters; load friction may go negative
PARAM_FLOORS = {"J_l": 1e-3, "J_m": 1e-3, "k_l": 1e-3, "R_A": 1e-3, "K_m": 1e-3, "beta_m": 0.0}


@dataclass
class RunResult:
    scenario: Scenario
    trace: LearningTrace
    q_nominal: float
    epsilon_Q: float
    final_delta: np.ndarray
    learning: bool

    @property
    def termination_iteration(self) -> int:
        return self.trace.iterations


def make_loop(s: Scenario, model_params=None) -> TrackingLoop:
    plant = PlantSim(s.true_params, s.dt_mpc)
    params = s.assumed_params if model_params is None else model_params
    ctl = MpcController(servo_condensed(build_servo_model(params), s.tuning, s.dt_mpc))
    ref = functools.partial(reference, amplitude=s.amplitude, period=s.period)
    return TrackingLoop(plant, ctl, ref, C_R)


def window_costs(trace: LearningTrace, n_e: int, dt: float) -> list[float]:
    """Cost of every complete ``n_e``-sample window of a trace."""
    ye = np.asarray(trace.y_e)
    spec = CostSpec(n_e)
    return [
        evaluate_cost(spec, ye[k:k + n_e, 0], ye[k:k + n_e, 1], dt, ye[k - 1, 0] if k else 0.0)
        for k in range(0, len(ye) - n_e + 1, n_e)
    ]


def simulate_fixed(s: Scenario, steps: int, model_params=None) -> LearningTrace:
    """Closed loop with a fixed prediction model (assumed parameters unless given)."""
    loop = make_loop(s, model_params)
    trace = LearningTrace(N_E=s.n_e)
    for _ in range(steps):
        loop.step(trace)
    return trace


@functools.lru_cache(maxsize=32)
def measure_q_nominal(s: Scenario) -> float:
    """Steady-state window cost of the model-matched loop (second window)."""
    nom = s.nominal()
    trace = simulate_fixed(nom, 2 * nom.n_e)
    return window_costs(trace, nom.n_e, nom.dt_mpc)[1]


def uncertainty_map(s: Scenario) -> UncertaintyMap:
    names = tuple(p.name for p in s.learned)
    return UncertaintyMap(
        PHYSICAL, names, s.assumed_params, builder=build_servo_model,
        floors={k: v for k, v in PARAM_FLOORS.items() if k in names},
    )


def mes_state(s: Scenario) -> MesState:
    n_max = 4 * 4 + 4 * 1 + 2 * 4 + 2 * 1
    chans = tuple(DitherChannel(p.a, p.omega, name=p.name) for p in s.learned)
    return MesState(chans, s.n_e * s.dt_mpc, n_max=n_max)


def run_scenario(s: Scenario, learning: bool | None = None) -> RunResult:
    learning = s.learning if learning is None else learning
    q_nom = s.q_nominal if s.q_nominal is not None else measure_q_nominal(s)
    eps = s.eps_factor * q_nom
    if not learning or not s.learned:
        trace = simulate_fixed(s, s.duration_steps)
        trace.Q = window_costs(trace, s.n_e, s.dt_mpc)
        trace.delta_hat = [np.zeros(len(s.learned))] * len(trace.Q)
        return RunResult(s, trace, q_nom, eps, np.zeros(len(s.learned)), False)
    cfg = LearningConfig(eps, s.n_e, s.dt_mpc, s.max_iterations)
    factory = functools.partial(servo_condensed, tune=s.tuning, dt=s.dt_mpc)
    trace, mes = run_algorithm_one(make_loop(s), factory, mes_state(s), uncertainty_map(s), cfg)
    return RunResult(s, trace, q_nom, eps, trace.delta_hat[-1], True)
