"""Condensed linear MPC with a terminal feedback law and an optional soft output slack.

At each cycle the controller solves

    min  sum_{i<N} |x_i|_Q^2 + |u_i|_R^2 + |x_N|_P^2 + rho*sigma^2
    s.t. x_{i+1} = A x_i + B u_i,  y_i = C x_i + D u_i,
         xmin <= x_i <= xmax          i in [1, N_c]
         umin <= u_i <= umax          i in [0, N_cu-1]
         ymin - sigma <= y_i <= ymax + sigma   i in [out_from, N_c]
         u_i = K_f x_i                i in [N_u, N-1]

over U = [u_0; ...; u_{N_u-1}] (and sigma >= 0 when outputs are soft).
Predicted states are eliminated, so the QP only carries the moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lti import Bounds, DiscreteStateSpace
from .qp import OPTIMAL, ActiveSetSolver, QpProblem, QpSolution


class MpcSolveError(RuntimeError):
    def __init__(self, status: str, message: str = ""):
        self.status = status
        super().__init__(message or f"MPC QP solve failed: {status}")


def _sym(M, name, n, strict):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(M)[0]
    scale = max(1.0, np.abs(M).max())
    if strict and ev <= 1e-12 * scale:
        raise ValueError(f"{name} must be positive definite (min eig {ev:g})")
    if not strict and ev < -1e-10 * scale:
        raise ValueError(f"{name} must be positive semidefinite (min eig {ev:g})")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class MpcConfig:
    N: int
    N_u: int
    N_cu: int
    N_c: int
    Q_M: np.ndarray
    R_M: np.ndarray
    P_M: np.ndarray
    K_f: np.ndarray
    bounds: Bounds
    soft_output: bool = False
    rho: float = 1e5
    out_from: int = 1

    def horizon_errors(self) -> list[str]:
        """Violated horizon relations, as messages (empty when valid)."""
        errs = []
        if self.N < 1:
            errs.append(f"N must be >= 1 (got {self.N})")
        if not 1 <= self.N_u <= self.N:
            errs.append(f"N_u must satisfy 1 <= N_u <= N (got N_u={self.N_u}, N={self.N})")
        if not 0 <= self.N_cu <= self.N:
            errs.append(f"N_cu must satisfy 0 <= N_cu <= N (got N_cu={self.N_cu}, N={self.N})")
        if not 0 <= self.N_c <= self.N - 1:
            errs.append(f"N_c must satisfy 0 <= N_c <= N-1 (got N_c={self.N_c}, N={self.N})")
        if self.out_from not in (0, 1):
            errs.append(f"out_from must be 0 or 1 (got {self.out_from})")
        if self.soft_output and not self.rho > 0:
            errs.append(f"rho must be positive (got {self.rho})")
        return errs


@dataclass(frozen=True, eq=False)
class CondensedMpc:
    """Prediction maps and the parametric QP ``H, f = F x, G, w = w0 + W x``."""

    model: DiscreteStateSpace
    cfg: MpcConfig
    Phi: np.ndarray      # (N+1, n, n) free response x_i = Phi_i x0 + Gamma_i U
    Gamma: np.ndarray    # (N+1, n, nU)
    Psi: np.ndarray      # (N, m, n) inputs u_i = Psi_i x0 + Lam_i U
    Lam: np.ndarray      # (N, m, nU)
    H: np.ndarray
    F: np.ndarray        # f = F @ x0
    G: np.ndarray
    w0: np.ndarray
    W: np.ndarray
    soft_rows: np.ndarray
    row_labels: tuple = field(repr=False, default=())

    @property
    def n_u(self) -> int:
        return self.cfg.N_u * self.model.m

    @property
    def n_z(self) -> int:
        return self.n_u + (1 if self.cfg.soft_output else 0)

    @property
    def n_q(self) -> int:
        return self.G.shape[0]

    def fingerprint(self) -> bytes:
        return b"".join(M.tobytes() for M in (self.H, self.F, self.G, self.w0, self.W))


def condense(model: DiscreteStateSpace, cfg: MpcConfig) -> CondensedMpc:
    errs = cfg.horizon_errors()
    if errs:
        raise ValueError("; ".join(errs))
    n, m, p = model.n, model.m, model.p
    Q = _sym(cfg.Q_M, "Q_M", n, strict=False)
    R = _sym(cfg.R_M, "R_M", m, strict=True)
    # P_M = Q_M is allowed to be singular; R_M > 0 keeps H positive definite
    P = _sym(cfg.P_M, "P_M", n, strict=False)
    K = np.atleast_2d(np.asarray(cfg.K_f, dtype=float))
    if K.shape != (m, n):
        raise ValueError(f"K_f must be {m}x{n}, got {K.shape}")
    b = cfg.bounds
    if b.xmin.shape != (n,) or b.umin.shape != (m,) or b.ymin.shape != (p,):
        raise ValueError("bounds dimensions do not match the model")

    N, N_u = cfg.N, cfg.N_u
    nU = N_u * m
    A, B, C, D = model.A, model.B, model.C, model.D

    Phi = np.zeros((N + 1, n, n))
    Gam = np.zeros((N + 1, n, nU))
    Psi = np.zeros((N, m, n))
    Lam = np.zeros((N, m, nU))
    Phi[0] = np.eye(n)
    for i in range(N):
        if i < N_u:
            Lam[i][:, i * m:(i + 1) * m] = np.eye(m)
        else:
            Psi[i] = K @ Phi[i]
            Lam[i] = K @ Gam[i]
        Phi[i + 1] = A @ Phi[i] + B @ Psi[i]
        Gam[i + 1] = A @ Gam[i] + B @ Lam[i]

    Hu = Gam[N].T @ P @ Gam[N]
    Fu = Phi[N].T @ P @ Gam[N]
    for i in range(N):
        Hu += Gam[i].T @ Q @ Gam[i] + Lam[i].T @ R @ Lam[i]
        Fu += Phi[i].T @ Q @ Gam[i] + Psi[i].T @ R @ Lam[i]
    Hu = Hu + Hu.T
    Fu = 2.0 * Fu.T

    rows_G, rows_w, rows_W, soft, labels = [], [], [], [], []

    def add(kind, i, idx, Mu, Mx, lo, hi, is_soft):
        # Mu U + Mx x0 within [lo, hi]; infinite sides produce no row
        for j in range(len(lo)):
            if np.isfinite(hi[j]):
                rows_G.append(Mu[j]); rows_w.append(hi[j]); rows_W.append(-Mx[j])
                soft.append(is_soft); labels.append((kind, i, idx + j, "max"))
            if np.isfinite(lo[j]):
                rows_G.append(-Mu[j]); rows_w.append(-lo[j]); rows_W.append(Mx[j])
                soft.append(is_soft); labels.append((kind, i, idx + j, "min"))

    for i in range(0, cfg.N_cu):
        add("u", i, 0, Lam[i], Psi[i], b.umin, b.umax, False)
    for i in range(1, cfg.N_c + 1):
        add("x", i, 0, Gam[i], Phi[i], b.xmin, b.xmax, False)
    for i in range(cfg.out_from, cfg.N_c + 1):
        Yu = C @ Gam[i] + D @ Lam[i]
        Yx = C @ Phi[i] + D @ Psi[i]
        add("y", i, 0, Yu, Yx, b.ymin, b.ymax, cfg.soft_output)

    G = np.array(rows_G, dtype=float).reshape(-1, nU)
    w0 = np.array(rows_w, dtype=float)
    W = np.array(rows_W, dtype=float).reshape(-1, n)
    soft = np.array(soft, dtype=bool)

    if cfg.soft_output:
        H = np.zeros((nU + 1, nU + 1))
        H[:nU, :nU] = Hu
        H[nU, nU] = 2.0 * cfg.rho
        F = np.vstack([Fu, np.zeros((1, n))])
        sig_col = np.where(soft, -1.0, 0.0)[:, None]
        G = np.vstack([np.hstack([G, sig_col]), np.eye(1, nU + 1, nU) * -1.0])
        w0 = np.append(w0, 0.0)
        W = np.vstack([W, np.zeros((1, n))])
        soft = np.append(soft, False)
        labels.append(("sigma", 0, 0, "min"))
    else:
        H, F = Hu, Fu

    # validates positive definiteness once; per-cycle problems skip the check
    QpProblem(H, np.zeros(H.shape[0]), G, w0)
    return CondensedMpc(
        model=model, cfg=cfg, Phi=Phi, Gamma=Gam, Psi=Psi, Lam=Lam,
        H=H, F=F, G=G, w0=w0, W=W, soft_rows=soft, row_labels=tuple(labels),
    )


def assemble_qp(c: CondensedMpc, x_now) -> QpProblem:
    x = np.asarray(x_now, dtype=float)
    if x.shape != (c.model.n,):
        raise ValueError(f"state must have shape ({c.model.n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    return QpProblem(c.H, c.F @ x, c.G, c.w0 + c.W @ x, check=False)


@dataclass(frozen=True)
class ControlStep:
    u_applied: np.ndarray
    U: np.ndarray
    predicted_states: np.ndarray
    predicted_outputs: np.ndarray
    qp_status: str
    sigma: float
    iterations: int
    solution: QpSolution


def predict(c: CondensedMpc, x0, U):
    """Stacked predicted states (N+1 rows) and outputs (N rows) under moves ``U``."""
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    xs = c.Phi @ x0 + c.Gamma @ U
    us = c.Psi @ x0 + c.Lam @ U
    ys = xs[:-1] @ c.model.C.T + us @ c.model.D.T
    return xs, ys


def mpc_step(c: CondensedMpc, solver: ActiveSetSolver, x_now, warm_start=None) -> ControlStep:
    p = assemble_qp(c, x_now)
    sol = solver.solve(p, warm_start)
    if sol.status != OPTIMAL:
        raise MpcSolveError(sol.status)
    U = sol.z_star[:c.n_u]
    sigma = float(sol.z_star[c.n_u]) if c.cfg.soft_output else 0.0
    sigma = sigma if sigma > 0.0 else 0.0
    xs, ys = predict(c, x_now, U)
    return ControlStep(
        u_applied=U[:c.model.m].copy(),
        U=U,
        predicted_states=xs,
        predicted_outputs=ys,
        qp_status=sol.status,
        sigma=sigma,
        iterations=sol.iterations,
        solution=sol,
    )


class MpcController:
    """Receding-horizon loop state: condensed problem, solver workspace, warm start."""

    def __init__(self, condensed: CondensedMpc, solver: ActiveSetSolver | None = None):
        self.condensed = condensed
        self.solver = solver or ActiveSetSolver()
        self._warm: tuple[int, ...] = ()

    def step(self, x_now) -> ControlStep:
        out = mpc_step(self.condensed, self.solver, x_now, self._warm)
        self._warm = out.solution.active_set
        return out

    def replace_model(self, condensed: CondensedMpc):
        self.condensed = condensed
        self._warm = tuple(i for i in self._warm if i < condensed.n_q)
