"""Iterative learning loop: MPC windows alternating with extremum-seeking updates.

Each learning iteration runs ``N_E`` closed-loop MPC steps against the true
plant, scores the window with the tracking cost ``Q``, and, while ``Q``
exceeds the threshold, takes one extremum-seeking step on the uncertain
parameters and re-condenses the MPC around the corrected model. The plant is
never reset between iterations.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .lti import ContinuousStateSpace, DiscreteStateSpace
from .mes import MesState, mes_update
from .mpc import CondensedMpc, MpcController, MpcSolveError

log = logging.getLogger(__name__)

ELEMENTWISE = "elementwise"
PHYSICAL = "physical"


class LearningError(RuntimeError):
    pass


def _project_spectral(M: np.ndarray, limit: float) -> np.ndarray:
    """Nearest matrix (Frobenius) with spectral norm at most ``limit``."""
    if M.size == 0:
        return M
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] <= limit:
        return M
    return (U * np.minimum(s, limit)) @ Vt


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    """Turns the learned vector into a prediction model.

    ``physical`` mode: ``names`` are attributes of ``base`` (a parameter
    dataclass); the learned values are added to them and ``builder`` produces
    the model. Parameters listed in ``floors`` are clamped from below.

    ``elementwise`` mode: ``names`` are entries such as ``"A[1,1]"``; the
    learned values fill the deltas of ``base`` (a state-space model), each
    delta matrix is projected onto its spectral-norm ball from ``limits``.
    """

    mode: str
    names: tuple[str, ...]
    base: object
    builder: Callable | None = None
    floors: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.mode == PHYSICAL:
            if self.builder is None:
                raise ValueError("physical mode needs a model builder")
            for nm in self.names:
                if not hasattr(self.base, nm):
                    raise ValueError(f"unknown parameter {nm!r}")
        elif self.mode == ELEMENTWISE:
            entries = [self._parse(nm) for nm in self.names]
            object.__setattr__(self, "_entries", entries)
            for key, lim in self.limits.items():
                if key not in "ABCD" or not lim > 0:
                    raise ValueError(f"bad limit {key}={lim}")
        else:
            raise ValueError(f"unknown uncertainty mode {self.mode!r}")

    def _parse(self, name: str):
        try:
            mat, rest = name.split("[", 1)
            i, j = (int(v) for v in rest.rstrip("]").split(","))
        except ValueError as exc:
            raise ValueError(f"bad matrix entry {name!r}; expected e.g. 'A[0,1]'") from exc
        M = getattr(self.base, mat, None)
        if mat not in "ABCD" or M is None or not (0 <= i < M.shape[0] and 0 <= j < M.shape[1]):
            raise ValueError(f"matrix entry {name!r} out of range")
        return mat, i, j

    @property
    def size(self) -> int:
        return len(self.names)

    def deltas(self, delta_hat) -> dict[str, np.ndarray]:
        """Projected correction matrices (elementwise mode)."""
        base = self.base
        D = {k: np.zeros_like(getattr(base, k)) for k in "ABCD"}
        for (mat, i, j), v in zip(self._entries, delta_hat):
            D[mat][i, j] += v
        return {k: _project_spectral(M, self.limits[k]) if k in self.limits else M for k, M in D.items()}

    def rebuild(self, delta_hat):
        model, _ = rebuild_model(self, delta_hat)
        return model


def rebuild_model(umap: UncertaintyMap, delta_hat) -> tuple[object, list[str]]:
    """Model for ``delta_hat`` plus the names of any clamped parameters."""
    delta_hat = np.asarray(delta_hat, dtype=float).ravel()
    if delta_hat.shape != (umap.size,):
        raise ValueError(f"expected {umap.size} learned values, got {delta_hat.shape[0]}")
    if not np.all(np.isfinite(delta_hat)):
        raise ValueError("learned values are not finite")
    if umap.mode == PHYSICAL:
        updates, flagged = {}, []
        for nm, v in zip(umap.names, delta_hat):
            val = getattr(umap.base, nm) + float(v)
            floor = umap.floors.get(nm)
            if floor is not None and val < floor:
                val = floor
                flagged.append(nm)
            updates[nm] = val
        if flagged:
            log.warning("clamped learned parameters to their floors: %s", ", ".join(flagged))
        return umap.builder(replace(umap.base, **updates)), flagged
    base = umap.base
    D = umap.deltas(delta_hat)
    mats = {k: getattr(base, k) + D[k] for k in "ABCD"}
    if isinstance(base, DiscreteStateSpace):
        return DiscreteStateSpace(mats["A"], mats["B"], mats["C"], mats["D"], base.dt), []
    return ContinuousStateSpace(mats["A"], mats["B"], mats["C"], mats["D"]), []


@dataclass(frozen=True)
class CostSpec:
    """Weights of the three window terms: tracked error, its rate, and the second error output."""

    N_E: int
    w_error: float = 1.0
    w_rate: float = 1.0
    w_second: float = 1.0

    def __post_init__(self):
        if self.N_E < 2:
            raise ValueError("cost window needs at least two samples")
        if min(self.w_error, self.w_rate, self.w_second) < 0:
            raise ValueError("cost weights must be nonnegative")


def error_velocity(e, dt: float, prior: float = 0.0) -> np.ndarray:
    """Backward-difference rate of ``e``; ``prior`` is the sample preceding ``e[0]``."""
    e = np.asarray(e, dtype=float)
    if e.ndim != 1 or e.size < 2:
        raise ValueError("need at least two samples")
    return np.diff(e, prepend=float(prior)) / dt


def evaluate_cost(spec: CostSpec, e_tracked, e_second, dt: float, prior: float | None = None) -> float:
    """Window cost: squared tracked error, its backward-difference rate, and the second error.

    Without ``prior`` nothing is known before the window and the first rate is
    taken as zero.
    """
    e1 = np.asarray(e_tracked, dtype=float)
    e2 = np.asarray(e_second, dtype=float)
    if e1.shape != (spec.N_E,) or e2.shape != (spec.N_E,):
        raise ValueError(f"cost window must hold exactly {spec.N_E} samples")
    v = error_velocity(e1, dt, e1[0] if prior is None else prior)
    return float(
        spec.w_error * np.dot(e1, e1) + spec.w_rate * np.dot(v, v) + spec.w_second * np.dot(e2, e2)
    )


@dataclass(frozen=True)
class LearningConfig:
    epsilon_Q: float
    N_E: int
    dt_mpc: float
    max_iterations: int = 100
    learn: bool = True

    def __post_init__(self):
        if not self.epsilon_Q > 0:
            raise ValueError(f"epsilon_Q must be positive, got {self.epsilon_Q}")
        if self.N_E < 2:
            raise ValueError(f"N_E must be at least 2, got {self.N_E}")
        if not self.dt_mpc > 0:
            raise ValueError(f"dt_mpc must be positive, got {self.dt_mpc}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    @property
    def dt_mes(self) -> float:
        return self.N_E * self.dt_mpc


@dataclass
class LearningTrace:
    """Per-step signals and per-iteration learning history of one run."""

    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    y: list = field(default_factory=list)
    r: list = field(default_factory=list)
    y_e: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    qp_iterations: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    delta_hat: list = field(default_factory=list)
    model_hash: list = field(default_factory=list)
    clamped: list = field(default_factory=list)
    terminated: bool = False
    N_E: int = 0

    @property
    def iterations(self) -> int:
        return len(self.Q)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "t": np.asarray(self.t),
            "x": np.asarray(self.x).reshape(len(self.t), -1),
            "u": np.asarray(self.u).reshape(len(self.t), -1),
            "y": np.asarray(self.y).reshape(len(self.t), -1),
            "r": np.asarray(self.r),
            "y_e": np.asarray(self.y_e).reshape(len(self.t), -1),
            "sigma": np.asarray(self.sigma),
            "qp_iterations": np.asarray(self.qp_iterations, dtype=int),
        }

    def first_below(self, threshold: float) -> int | None:
        """1-based iteration at which Q first dropped to ``threshold`` or below."""
        for i, q in enumerate(self.Q, start=1):
            if q <= threshold:
                return i
        return None


class TrackingLoop:
    """Closed loop of an incremental tracking MPC around a plant.

    The MPC state is ``[x; r; u_prev]`` with a scalar reference held constant
    over the horizon and refreshed from ``reference(t)`` every cycle. The
    error output is ``y - C_r r``.
    """

    def __init__(self, plant, controller: MpcController, reference: Callable[[float], float],
                 C_r: Sequence[float], u0=0.0):
        self.plant = plant
        self.controller = controller
        self.reference = reference
        self.C_r = np.asarray(C_r, dtype=float)
        self.u_prev = np.atleast_1d(np.asarray(u0, dtype=float)).copy()

    def step(self, trace: LearningTrace):
        t = self.plant.t
        r = float(self.reference(t))
        x = self.plant.x.copy()
        y = self.plant.outputs()
        xa = np.concatenate([x, [r], self.u_prev])
        out = self.controller.step(xa)
        u = self.u_prev + out.u_applied
        trace.t.append(t)
        trace.x.append(x)
        trace.u.append(u)
        trace.y.append(y)
        trace.r.append(r)
        trace.y_e.append(y - self.C_r * r)
        trace.sigma.append(out.sigma)
        trace.qp_iterations.append(out.iterations)
        self.plant.step(u)
        self.u_prev = u


def run_algorithm_one(
    loop: TrackingLoop,
    mpc_factory: Callable[[object], CondensedMpc],
    mes: MesState,
    umap: UncertaintyMap,
    cfg: LearningConfig,
    cost: CostSpec | None = None,
    tracked: int = 0,
    second: int = 1,
) -> tuple[LearningTrace, MesState]:
    """Alternate ``N_E`` MPC steps with one extremum-seeking update until ``Q <= epsilon_Q``.

    The run also stops after ``cfg.max_iterations`` windows. With
    ``cfg.learn`` false the windows are scored but the model never changes.
    """
    if abs(mes.dt_mes - cfg.dt_mes) > 1e-12 * cfg.dt_mes:
        raise ValueError(f"MES sampling time {mes.dt_mes} differs from N_E*dt_mpc = {cfg.dt_mes}")
    if len(mes.channels) != umap.size:
        raise ValueError(f"{len(mes.channels)} dither channels for {umap.size} learned values")
    cost = cost or CostSpec(cfg.N_E)
    if cost.N_E != cfg.N_E:
        raise ValueError("cost window length differs from N_E")

    trace = LearningTrace(N_E=cfg.N_E)
    model, flagged = rebuild_model(umap, mes.delta_hat)
    condensed = mpc_factory(model)
    loop.controller.replace_model(condensed)
    while True:
        it = trace.iterations + 1
        delta_now = mes.delta_hat
        start = len(trace.t)
        for ell in range(cfg.N_E):
            try:
                loop.step(trace)
            except MpcSolveError as exc:
                raise LearningError(
                    f"MPC solve failed at iteration {it}, step {ell} ({exc.status}); "
                    f"learned values {delta_now.tolist()}"
                ) from exc
        ye = np.asarray(trace.y_e[start:])
        prior = trace.y_e[start - 1][tracked] if start else 0.0
        q = evaluate_cost(cost, ye[:, tracked], ye[:, second], cfg.dt_mpc, prior)
        trace.Q.append(q)
        trace.delta_hat.append(delta_now)
        trace.model_hash.append(hashlib.sha1(loop.controller.condensed.fingerprint()).hexdigest())
        trace.clamped.append(tuple(flagged))
        log.info("iteration %d: Q=%.6g delta_hat=%s", it, q, delta_now)
        if q <= cfg.epsilon_Q:
            trace.terminated = True
            break
        if it >= cfg.max_iterations:
            break
        if not math.isfinite(q):
            raise LearningError(f"cost is not finite at iteration {it}")
        if cfg.learn:
            mes = mes_update(mes, q)
            model, flagged = rebuild_model(umap, mes.delta_hat)
            loop.controller.replace_model(mpc_factory(model))
    return trace, mes
