"""Dense two-phase simplex for  min c.x  s.t.  A x = b,  x >= 0."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-8
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel()
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).ravel()
        if A.shape != (b.size, c.size):
            raise InputError(f"A is {A.shape}, expected ({b.size}, {c.size})")
        if c.size < 1 or b.size < 1:
            raise InputError("need at least one variable and one constraint")
        if not (np.isfinite(A).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise InputError("LP data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass
class LPResult:
    status: str
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    basis: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    # infeasible: (row, artificial value) pairs left positive after phase 1
    certificate: list[tuple[int, float]] = field(default_factory=list)
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def residuals(lp: LinearProgram, x) -> tuple[float, float]:
    """(max |A x - b|, min x_j)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != lp.c.size:
        raise InputError("x has the wrong length")
    return float(np.max(np.abs(lp.A @ x - lp.b))), float(np.min(x))


class _Tableau:
    def __init__(self, T: np.ndarray, basis: np.ndarray, ncols: int):
        self.T = T              # rows 0..m-1 constraints, last row objective; last column rhs
        self.basis = basis
        self.ncols = ncols      # columns eligible to enter
        self.pivots = 0

    def pivot(self, r: int, j: int):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j
        self.pivots += 1

    def _ratio_row(self, j: int) -> int:
        col = self.T[:-1, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return -1
        ratios = self.T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        return int(ties[np.argmin(self.basis[ties])])

    def optimize(self, max_degenerate: int = 50) -> str:
        bland = False
        stuck = 0
        while True:
            rc = self.T[-1, : self.ncols]
            if bland:
                cand = np.flatnonzero(rc < -PIVOT_TOL)
                if cand.size == 0:
                    return OPTIMAL
                j = int(cand[0])
            else:
                j = int(np.argmin(rc))
                if rc[j] >= -PIVOT_TOL:
                    return OPTIMAL
            r = self._ratio_row(j)
            if r < 0:
                return UNBOUNDED
            degenerate = self.T[r, -1] <= PIVOT_TOL
            self.pivot(r, j)
            stuck = stuck + 1 if degenerate else 0
            if stuck > max_degenerate:
                bland = True


def solve_lp(lp: LinearProgram) -> LPResult:
    A, b, c = lp.A.copy(), lp.b.copy(), lp.c
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial basis, minimize their sum
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    tab = _Tableau(T, np.arange(n, n + m), n)
    tab.optimize()
    if -tab.T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
        cert = [(int(r), float(tab.T[r, -1])) for r in range(m)
                if tab.basis[r] >= n and tab.T[r, -1] > FEAS_TOL]
        return LPResult(INFEASIBLE, certificate=cert, pivots=tab.pivots)

    # drive remaining artificials out of the basis; rows where that fails are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= n:
            row = tab.T[r, :n]
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size:
                tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
            else:
                keep[r] = False
    rows = np.flatnonzero(keep)

    # phase 2
    T2 = np.zeros((rows.size + 1, n + 1))
    T2[:-1, :n] = tab.T[rows, :n]
    T2[:-1, -1] = tab.T[rows, -1]
    basis = tab.basis[rows].copy()
    T2[-1, :n] = c
    T2[-1] -= c[basis] @ T2[:-1]
    tab2 = _Tableau(T2, basis, n)
    tab2.pivots = tab.pivots
    status = tab2.optimize()
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, pivots=tab2.pivots)

    # recompute the vertex from the original data to shed tableau round-off
    basis = tab2.basis
    B = lp.A[:, basis]
    x = np.zeros(n)
    x[basis] = np.linalg.lstsq(B, lp.b, rcond=None)[0]
    y = np.linalg.lstsq(B.T, c[basis], rcond=None)[0]
    reduced = c - lp.A.T @ y
    return LPResult(OPTIMAL, x, float(c @ x), basis.copy(), reduced, pivots=tab2.pivots)
