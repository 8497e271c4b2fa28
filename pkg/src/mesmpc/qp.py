"""Dense strictly convex QP solver.

Solves ``min 1/2 z'Hz + f'z  s.t.  G z <= w`` with the dual active-set method
of Goldfarb and Idnani. The method starts from the unconstrained minimizer,
so no phase-1 problem is needed, and it reports infeasibility when a violated
constraint can neither be reached by a primal step nor freed by dropping an
active one. A working set from a previous solve can seed the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"

H_MIN_EIG = 1e-9


@dataclass(frozen=True, eq=False)
class QpProblem:
    """``min 1/2 z'Hz + f'z`` subject to ``G z <= w`` (``w`` entries may be +inf)."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray | None = None
    w: np.ndarray | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = f.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {H.shape}")
        G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, n)
        w = np.zeros(0) if self.w is None else np.atleast_1d(np.asarray(self.w, dtype=float))
        if w.shape != (G.shape[0],):
            raise ValueError(f"w must have {G.shape[0]} entries, got {w.shape}")
        if self.check:
            if not (np.all(np.isfinite(H)) and np.all(np.isfinite(f)) and np.all(np.isfinite(G))):
                raise ValueError("QP data has non-finite entries")
            if np.any(np.isnan(w)) or np.any(w == -np.inf):
                raise ValueError("w must be finite or +inf")
            H = 0.5 * (H + H.T)
            if n and np.linalg.eigvalsh(H)[0] < H_MIN_EIG:
                raise ValueError("H is not positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    @property
    def n_z(self) -> int:
        return self.f.shape[0]

    @property
    def n_q(self) -> int:
        return self.G.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass(frozen=True)
class QpSolution:
    z_star: np.ndarray
    objective: float
    active_set: tuple[int, ...]
    status: str
    multipliers: np.ndarray
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(p: QpProblem, sol: QpSolution) -> dict[str, float]:
    """Primal violation, dual violation, stationarity and complementarity residuals."""
    z = sol.z_star
    lam = np.zeros(p.n_q)
    lam[list(sol.active_set)] = sol.multipliers
    slack = p.w - p.G @ z
    finite = np.isfinite(slack)
    return {
        "primal": float(max(0.0, -slack[finite].min())) if finite.any() else 0.0,
        "dual": float(max(0.0, -lam.min())) if lam.size else 0.0,
        "stationarity": float(np.abs(p.H @ z + p.f + p.G.T @ lam).max()) if p.n_z else 0.0,
        "complementarity": float(np.abs(lam[finite] * slack[finite]).max()) if finite.any() else 0.0,
    }


class ActiveSetSolver:
    """Reusable solver; caches the factorization of the last (H, G) pair seen.

    Instances hold scratch state and are not thread safe; use one per thread.
    """

    def __init__(self, max_changes: int | None = None, feas_tol: float = 1e-9):
        self.max_changes = max_changes
        self.feas_tol = feas_tol
        self._key: tuple[bytes, bytes] | None = None

    def _prepare(self, p: QpProblem):
        key = (p.H.tobytes(), p.G.tobytes())
        if key == self._key:
            return
        try:
            self._chol = cho_factor(p.H)
        except LinAlgError as exc:
            raise ValueError("H is not positive definite") from exc
        # H^-1 G' and G H^-1 G' are all the iteration needs
        self._HiGt = cho_solve(self._chol, p.G.T) if p.n_q else np.zeros((p.n_z, 0))
        self._GHG = p.G @ self._HiGt
        self._row_norm = np.maximum(np.linalg.norm(p.G, axis=1), 1.0) if p.n_q else np.zeros(0)
        self._key = key

    def _equality_solve(self, p, z_u, Gz_u, A):
        """Minimizer with constraints in ``A`` held as equalities, and their multipliers."""
        if not A:
            return z_u.copy(), np.zeros(0)
        M = self._GHG[np.ix_(A, A)]
        lam = np.linalg.solve(M, Gz_u[A] - p.w[A])
        return z_u - self._HiGt[:, A] @ lam, lam

    def _seed(self, p, z_u, Gz_u, warm):
        A = []
        for i in warm:
            i = int(i)
            if not (0 <= i < p.n_q) or not np.isfinite(p.w[i]) or i in A:
                continue
            trial = A + [i]
            M = self._GHG[np.ix_(trial, trial)]
            # keep the working set linearly independent
            if np.linalg.matrix_rank(M, tol=1e-10 * max(1.0, np.abs(M).max())) == len(trial):
                A = trial
        while A:
            z, lam = self._equality_solve(p, z_u, Gz_u, A)
            j = int(np.argmin(lam))
            if lam[j] >= 0.0:
                return A, z, lam
            del A[j]
        return [], z_u.copy(), np.zeros(0)

    def solve(self, p: QpProblem, warm_start=None) -> QpSolution:
        self._prepare(p)
        n_z, n_q = p.n_z, p.n_q
        max_changes = self.max_changes or 50 * (n_z + n_q)
        HiGt, GHG = self._HiGt, self._GHG

        z_u = -cho_solve(self._chol, p.f)
        Gz_u = p.G @ z_u
        if warm_start:
            A, z, lam = self._seed(p, z_u, Gz_u, warm_start)
        else:
            A, z, lam = [], z_u.copy(), np.zeros(0)
        lam = list(lam)

        changes = 0
        status = OPTIMAL
        while True:
            viol = (p.G @ z - p.w) / self._row_norm if n_q else np.zeros(0)
            if A:
                viol[A] = -np.inf
            if n_q == 0 or viol.max() <= self.feas_tol:
                break
            # argmax returns the lowest index among ties
            k = int(np.argmax(viol))
            lam_k = 0.0
            added = False
            while not added:
                if changes >= max_changes:
                    status = ITERATION_LIMIT
                    break
                if A:
                    r = np.linalg.solve(GHG[np.ix_(A, A)], GHG[A, k])
                    curv = GHG[k, k] - GHG[A, k] @ r
                else:
                    r = np.zeros(0)
                    curv = GHG[k, k]
                # primal step length to satisfy constraint k
                if curv > 1e-12 * GHG[k, k]:
                    t_full = (p.G[k] @ z - p.w[k]) / curv
                else:
                    t_full = np.inf
                # dual step length before some active multiplier hits zero
                t_part, drop = np.inf, -1
                for j, rj in enumerate(r):
                    if rj > 1e-12 and lam[j] / rj < t_part:
                        t_part, drop = lam[j] / rj, j
                if not np.isfinite(t_full) and not np.isfinite(t_part):
                    status = INFEASIBLE
                    break
                t = min(t_full, t_part)
                if np.isfinite(t_full):
                    s = -HiGt[:, k] + (HiGt[:, A] @ r if A else 0.0)
                    z = z + t * s
                lam = [lj - t * rj for lj, rj in zip(lam, r)]
                lam_k += t
                changes += 1
                if t_full <= t_part:
                    A.append(k)
                    lam.append(lam_k)
                    added = True
                else:
                    del A[drop]
                    del lam[drop]
            if status != OPTIMAL:
                break

        if status == OPTIMAL:
            z, lam_arr = self._equality_solve(p, z_u, Gz_u, A)
            lam_arr = np.maximum(lam_arr, 0.0)
        else:
            lam_arr = np.asarray(lam, dtype=float)
        sol = QpSolution(
            z_star=z,
            objective=p.objective(z),
            active_set=tuple(A),
            status=status,
            multipliers=lam_arr,
            iterations=changes,
        )
        if status == OPTIMAL:
            res = kkt_residuals(p, sol)
            assert res["primal"] <= 1e-7 * max(1.0, np.abs(p.w[np.isfinite(p.w)]).max(initial=0.0)), res
        return sol


def solve_qp(p: QpProblem, warm_start=None) -> QpSolution:
    """One-shot solve with a fresh :class:`ActiveSetSolver`."""
    return ActiveSetSolver().solve(p, warm_start)
