"""Continuous/discrete LTI models, exact ZOH discretization and tracking augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _check_dims(A, B, C, D):
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise ValueError(f"B must have {n} rows, got {B.shape}")
    if C.shape[1] != n:
        raise ValueError(f"C must have {n} columns, got {C.shape}")
    if D.shape != (C.shape[0], B.shape[1]):
        raise ValueError(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")


def _frozen(M: np.ndarray) -> np.ndarray:
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class ContinuousStateSpace:
    """dx/dt = A x + B u, y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else _as_matrix(self.D, "D")
        _check_dims(A, B, C, D)
        for name, M in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, _frozen(M))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class DiscreteStateSpace:
    """x+ = A x + B u, y = C x + D u, sampled every ``dt`` seconds."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None
    dt: float = 1.0

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else _as_matrix(self.D, "D")
        _check_dims(A, B, C, D)
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name, M in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, _frozen(M))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def step(self, x, u):
        """Return ``(x_next, y)`` for one sample."""
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.A @ x + self.B @ u, self.C @ x + self.D @ u

    def simulate(self, x0, inputs):
        """Propagate from ``x0`` under the input sequence (rows of ``inputs``).

        Returns the state trajectory (len+1 rows) and outputs (len rows).
        """
        inputs = np.asarray(inputs, dtype=float).reshape(-1, self.m)
        xs = [np.asarray(x0, dtype=float)]
        ys = []
        for u in inputs:
            x_next, y = self.step(xs[-1], u)
            xs.append(x_next)
            ys.append(y)
        return np.array(xs), np.array(ys).reshape(-1, self.p)

    def fingerprint(self) -> bytes:
        return b"".join(M.tobytes() for M in (self.A, self.B, self.C, self.D))


@dataclass(frozen=True, eq=False)
class Bounds:
    """Box bounds on states, inputs and outputs; missing entries are unbounded."""

    xmin: np.ndarray
    xmax: np.ndarray
    umin: np.ndarray
    umax: np.ndarray
    ymin: np.ndarray
    ymax: np.ndarray

    def __post_init__(self):
        for lo, hi in (("xmin", "xmax"), ("umin", "umax"), ("ymin", "ymax")):
            a = np.atleast_1d(np.asarray(getattr(self, lo), dtype=float))
            b = np.atleast_1d(np.asarray(getattr(self, hi), dtype=float))
            if a.shape != b.shape:
                raise ValueError(f"{lo}/{hi} shape mismatch: {a.shape} vs {b.shape}")
            if np.any(np.isnan(a)) or np.any(np.isnan(b)):
                raise ValueError(f"{lo}/{hi} contain NaN")
            if np.any(a > b):
                raise ValueError(f"{lo} exceeds {hi} at index {int(np.argmax(a > b))}")
            object.__setattr__(self, lo, _frozen(a))
            object.__setattr__(self, hi, _frozen(b))

    @classmethod
    def unbounded(cls, n: int, m: int, p: int) -> "Bounds":
        inf = np.inf
        return cls(
            np.full(n, -inf), np.full(n, inf),
            np.full(m, -inf), np.full(m, inf),
            np.full(p, -inf), np.full(p, inf),
        )

    def replace(self, **kwargs) -> "Bounds":
        fields = {k: getattr(self, k) for k in ("xmin", "xmax", "umin", "umax", "ymin", "ymax")}
        fields.update(kwargs)
        return Bounds(**fields)


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    """Reference prediction dynamics r+ = A_r r with error output y_e = C x - C_r r."""

    A_r: np.ndarray
    C_r: np.ndarray

    def __post_init__(self):
        A_r = _as_matrix(self.A_r, "A_r")
        C_r = _as_matrix(self.C_r, "C_r")
        if A_r.shape[0] != A_r.shape[1]:
            raise ValueError(f"A_r must be square, got {A_r.shape}")
        if C_r.shape[1] != A_r.shape[0]:
            raise ValueError(f"C_r must have {A_r.shape[0]} columns, got {C_r.shape}")
        object.__setattr__(self, "A_r", _frozen(A_r))
        object.__setattr__(self, "C_r", _frozen(C_r))

    @property
    def nr(self) -> int:
        return self.A_r.shape[0]

    @classmethod
    def constant(cls, p: int, tracked: int = 0) -> "ReferenceModel":
        """Scalar constant reference acting on output ``tracked`` of a p-output plant."""
        C_r = np.zeros((p, 1))
        C_r[tracked, 0] = 1.0
        return cls(np.eye(1), C_r)


def matrix_exponential(M) -> np.ndarray:
    """exp(M) by scaling and squaring with a Pade core."""
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    return expm(M)


def zoh_discretize(sys: ContinuousStateSpace, dt: float) -> DiscreteStateSpace:
    """Exact zero-order-hold discretization.

    Uses the block exponential ``expm([[A, B], [0, 0]] * dt) = [[A_d, B_d], [0, I]]``.
    """
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = sys.n, sys.m
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = sys.A
    blk[:n, n:] = sys.B
    E = matrix_exponential(blk * dt)
    return DiscreteStateSpace(E[:n, :n], E[:n, n:], sys.C, sys.D, dt)


def augment_for_tracking(
    plant: DiscreteStateSpace, ref: ReferenceModel, incremental: bool = True
) -> DiscreteStateSpace:
    """Augment ``plant`` with reference dynamics and, optionally, an input memory.

    State layout is ``[x; r; u_prev]`` (``u_prev`` only when ``incremental``).
    With ``incremental`` the new input is the move ``dv`` and the applied
    plant input is ``u_prev + dv``. Outputs are ``[y; y_e]`` where
    ``y_e = C x - C_r r`` (``y`` includes the feedthrough of the applied input).
    """
    n, m, p = plant.n, plant.m, plant.p
    nr = ref.nr
    if ref.C_r.shape[0] != p:
        raise ValueError(f"C_r must have {p} rows to match plant outputs, got {ref.C_r.shape}")
    nu_mem = m if incremental else 0
    na = n + nr + nu_mem

    A = np.zeros((na, na))
    B = np.zeros((na, m))
    A[:n, :n] = plant.A
    A[n:n + nr, n:n + nr] = ref.A_r
    if incremental:
        A[:n, n + nr:] = plant.B
        A[n + nr:, n + nr:] = np.eye(m)
        B[:n] = plant.B
        B[n + nr:] = np.eye(m)
    else:
        B[:n] = plant.B

    C = np.zeros((2 * p, na))
    D = np.zeros((2 * p, m))
    C[:p, :n] = plant.C
    C[p:, :n] = plant.C
    C[p:, n:n + nr] = -ref.C_r
    if incremental:
        # applied input is u_prev + dv
        C[:p, n + nr:] = plant.D
        C[p:, n + nr:] = plant.D
    D[:p] = plant.D
    D[p:] = plant.D
    return DiscreteStateSpace(A, B, C, D, plant.dt)
