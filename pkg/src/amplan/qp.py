"""Small dense convex QP solver for the per-tick outer-loop problem.

Solves min 0.5 x'Hx + g'x subject to Ax <= b with an active-set iteration:
start from a working set (empty or warm-started), solve the equality-
constrained KKT system, drop rows with negative multipliers, add the most
violated row.  Problem sizes here are tiny (n <= 16, a few dozen rows), so
dense factorizations per iteration are the right trade-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 16
MAX_ROWS = 64


class QpDimensionError(ValueError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.H.shape[0])
        self.b = np.asarray(self.b, dtype=float).ravel()
        n, m = self.H.shape[0], self.A.shape[0]
        if n > MAX_DIM or m > MAX_ROWS:
            raise QpDimensionError(f"problem too large: n={n}, m={m}")
        if self.H.shape != (n, n) or self.g.shape != (n,) or self.b.shape != (m,):
            raise QpDimensionError("inconsistent problem dimensions")
        if np.abs(self.H - self.H.T).max() > 1e-10:
            raise QpDimensionError("H must be symmetric to 1e-10")
        # regularize near-singular Hessians so the KKT solves stay well posed
        w = np.linalg.eigvalsh(0.5 * (self.H + self.H.T))
        if w.min() <= 1e-9:
            self.H = self.H + (1e-9 - min(w.min(), 0.0) + 1e-9) * np.eye(n)
            self.regularized = True
        else:
            self.regularized = False


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    duals: np.ndarray
    iterations: int
    active_set: tuple = ()


@dataclass
class ActiveSetSolver:
    """Holds the warm-start working set between consecutive solves."""

    tol: float = 1e-9
    max_iter: int = 200
    _warm: tuple = field(default=(), repr=False)

    def reset(self):
        self._warm = ()

    def solve(self, prob: QpProblem, warm_start: bool = True) -> QpSolution:
        H, g, A, b = prob.H, prob.g, prob.A, prob.b
        n, m = H.shape[0], A.shape[0]
        work = sorted(i for i in self._warm if i < m) if warm_start else []

        x = np.zeros(n)
        lam = np.zeros(m)
        status = "max_iter"
        it = 0
        for it in range(1, self.max_iter + 1):
            k = len(work)
            K = np.zeros((n + k, n + k))
            K[:n, :n] = H
            if k:
                As = A[work]
                K[:n, n:] = As.T
                K[n:, :n] = As
            rhs = np.concatenate([-g, b[work]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                # dependent working set: drop the newest row and retry
                work = work[:-1]
                continue
            x = sol[:n]
            lam_work = sol[n:]

            if k and lam_work.min() < -self.tol:
                # drop the most negative multiplier (lowest row index on ties)
                worst = int(np.argmin(lam_work))
                work.pop(worst)
                continue

            resid = A @ x - b if m else np.zeros(0)
            if m == 0 or resid.max() <= self.tol:
                lam = np.zeros(m)
                lam[work] = np.maximum(lam_work, 0.0)
                status = "optimal"
                break

            if len(work) >= n:
                status = "infeasible"
                break
            # add the most violated row (lowest index among maximal violations)
            cand = int(np.argmax(resid > resid.max() - 1e-15))
            if cand in work:
                status = "infeasible"
                break
            work = sorted(work + [cand])

        self._warm = tuple(work)
        return QpSolution(x=x, status=status, duals=lam, iterations=it,
                         active_set=tuple(work))


def solve(prob: QpProblem, tol: float = 1e-9, max_iter: int = 200) -> QpSolution:
    """One-shot solve without warm starting."""
    return ActiveSetSolver(tol=tol, max_iter=max_iter).solve(prob, warm_start=False)


def kkt_residuals(prob: QpProblem, sol: QpSolution):
    """(primal infeasibility, stationarity, complementary slackness) norms."""
    primal = max(0.0, float((prob.A @ sol.x - prob.b).max())) if prob.A.size else 0.0
    stat = float(np.linalg.norm(prob.H @ sol.x + prob.g + prob.A.T @ sol.duals))
    comp = float(np.abs(sol.duals * (prob.A @ sol.x - prob.b)).max()) if prob.A.size else 0.0
    return primal, stat, comp
