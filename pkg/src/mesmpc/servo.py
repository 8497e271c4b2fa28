"""DC servo motor driving a load through a flexible shaft.

States are load angle, load rate, motor angle, motor rate; the input is the
motor voltage; outputs are the load angle and the shaft torque.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .lti import (
    Bounds,
    ContinuousStateSpace,
    DiscreteStateSpace,
    ReferenceModel,
    augment_for_tracking,
    zoh_discretize,
)
from .mpc import MpcConfig, condense, CondensedMpc

DT_MPC = 0.1
T_REF = 20.0 * math.pi


@dataclass(frozen=True)
class ServoParams:
    R_A: float = 10.0      # armature resistance [Ohm]
    K_m: float = 10.0      # motor constant [Nm/A]
    J_l: float = 25.0      # load inertia [kg m^2]
    beta_l: float = 25.0   # load friction [Nms/rad]
    k_l: float = 1280.0    # shaft stiffness [Nm/rad]
    J_m: float = 0.5       # motor inertia [kg m^2]
    beta_m: float = 0.1    # motor friction [Nms/rad]
    g: float = 20.0        # gear ratio; not given with the other constants

    def check(self):
        bad = [f.name for f in fields(self) if not (getattr(self, f.name) > 0)]
        if bad:
            raise ValueError(f"servo parameters must be positive: {', '.join(bad)}")
        return self


def build_servo_model(p: ServoParams, allow_nonpositive=("beta_l",)) -> ContinuousStateSpace:
    """Continuous model.

    Friction of the true load may be driven negative by a deliberate
    perturbation, so ``beta_l`` is exempt from the positivity check unless
    ``allow_nonpositive`` says otherwise.
    """
    bad = [
        f.name for f in fields(p)
        if f.name not in allow_nonpositive and not (getattr(p, f.name) > 0)
    ]
    if bad:
        raise ValueError(f"servo parameters must be positive: {', '.join(bad)}")
    kl, g = p.k_l, p.g
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-kl / p.J_l, -p.beta_l / p.J_l, kl / (g * p.J_l), 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [kl / (g * p.J_m), 0.0, -kl / (g * g * p.J_m), -(p.beta_m + p.K_m**2 / p.R_A) / p.J_m],
    ])
    B = np.array([[0.0], [0.0], [0.0], [p.K_m / (p.R_A * p.J_m)]])
    C = np.array([[1.0, 0.0, 0.0, 0.0], [kl, 0.0, -kl / g, 0.0]])
    return ContinuousStateSpace(A, B, C, np.zeros((2, 1)))


class PlantSim:
    """True plant, advanced exactly under a zero-order hold."""

    def __init__(self, params: ServoParams, dt: float = DT_MPC, x0=None):
        self.params = params
        self.model: DiscreteStateSpace = zoh_discretize(build_servo_model(params), dt)
        self.x = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.t = 0.0
        self.k = 0

    def outputs(self) -> np.ndarray:
        return self.model.C @ self.x

    def step(self, u):
        return plant_step(self, u)


def plant_step(sim: PlantSim, u):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise ValueError("plant input is not finite")
    sim.x = sim.model.A @ sim.x + sim.model.B @ u
    sim.k += 1
    sim.t = sim.k * sim.model.dt
    return sim.x.copy(), sim.outputs()


@dataclass(frozen=True)
class MpcTuning:
    N: int = 20
    N_u: int = 4
    N_cu: int = 4
    N_c: int = 4
    Q_y: float = 1e3
    R_v: float = 0.05
    rho: float = 1e5
    u_max: float = 220.0
    torque_max: float = 78.5
    soft_torque: bool = True
    out_from: int = 1


def reference(t, amplitude: float = 4.5, period: float = T_REF):
    return amplitude * np.sin(2.0 * np.pi * np.asarray(t) / period)


def servo_mpc_config(aug: DiscreteStateSpace, tune: MpcTuning) -> MpcConfig:
    """MPC weights/bounds on the augmented state ``[x(4); r; u_prev]``.

    Only the load-angle tracking error is weighted, so the state weight is the
    rank-one ``Q_y c' c`` with ``c`` the error row of the augmented output map;
    the terminal weight equals the stage weight.
    """
    n = aug.n
    c_err = aug.C[2]
    Q_M = tune.Q_y * np.outer(c_err, c_err)
    xmin = np.full(n, -np.inf)
    xmax = np.full(n, np.inf)
    xmin[-1], xmax[-1] = -tune.u_max, tune.u_max
    ymin = np.full(aug.p, -np.inf)
    ymax = np.full(aug.p, np.inf)
    ymin[1], ymax[1] = -tune.torque_max, tune.torque_max
    bounds = Bounds(xmin, xmax, [-np.inf], [np.inf], ymin, ymax)
    return MpcConfig(
        N=tune.N, N_u=tune.N_u, N_cu=tune.N_cu, N_c=tune.N_c,
        Q_M=Q_M, R_M=np.array([[tune.R_v]]), P_M=Q_M, K_f=np.zeros((1, n)),
        bounds=bounds, soft_output=tune.soft_torque, rho=tune.rho, out_from=tune.out_from,
    )


def servo_condensed(model: ContinuousStateSpace, tune: MpcTuning, dt: float = DT_MPC) -> CondensedMpc:
    """Sample ``model``, add reference and input memory, condense."""
    plant = zoh_discretize(model, dt)
    aug = augment_for_tracking(plant, ReferenceModel.constant(plant.p, 0), incremental=True)
    return condense(aug, servo_mpc_config(aug, tune))


@dataclass(frozen=True)
class LearnedParam:
    name: str
    a: float
    omega: float


@dataclass(frozen=True)
class Scenario:
    name: str
    true_params: ServoParams
    assumed_params: ServoParams
    learned: tuple[LearnedParam, ...] = ()
    amplitude: float = 4.5
    period: float = T_REF
    tuning: MpcTuning = field(default_factory=MpcTuning)
    duration_steps: int = 1500
    learning: bool = False
    dt_mpc: float = DT_MPC
    N_E: int | None = None
    eps_factor: float = 1.5
    max_iterations: int = 100
    q_nominal: float | None = None

    @property
    def n_e(self) -> int:
        # largest whole number of control periods within 1.5 reference periods
        if self.N_E is not None:
            return self.N_E
        return int(math.floor(1.5 * self.period / self.dt_mpc + 1e-9))

    def nominal(self) -> "Scenario":
        """Same settings with the true plant equal to the assumed one."""
        return replace(self, name=f"{self.name}-nominal", true_params=self.assumed_params,
                       learning=False, learned=())


PERTURBATIONS = {
    "nominal": {},
    "single": {"beta_l": -70.0},
    "double": {"beta_l": -70.0, "J_l": -0.2},
}

DITHERS = {
    "beta_l": LearnedParam("beta_l", 1e-6, 0.7),
    "J_l": LearnedParam("J_l", 1e-8, 0.8),
}


def perturbed(p: ServoParams, deltas: dict) -> ServoParams:
    return replace(p, **{k: getattr(p, k) + v for k, v in deltas.items()})


def canned_scenarios(g: float = 20.0) -> list[Scenario]:
    nominal = ServoParams(g=g)
    out = []
    for name, deltas in PERTURBATIONS.items():
        out.append(Scenario(
            name=name,
            true_params=perturbed(nominal, deltas),
            assumed_params=nominal,
            learned=tuple(DITHERS[k] for k in deltas),
            learning=bool(deltas),
        ))
    return out


def get_scenario(name: str, **overrides) -> Scenario:
    for s in canned_scenarios():
        if s.name == name:
            return replace(s, **overrides) if overrides else s
    raise KeyError(f"unknown scenario {name!r}")
