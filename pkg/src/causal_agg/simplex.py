"""Dense two-phase primal simplex for ``min c^T x  s.t.  A x <= b, x >= 0``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import dger

from .errors import Infeasible, IterationLimit, ValidationError

__all__ = ["LpResult", "simplex_minimize"]

PIVOT_TOL = 1e-9
# consecutive zero-step pivots tolerated before switching to lowest-index pricing
DEGENERATE_SWITCH = 50


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    fun: float
    iterations: int
    basis: tuple[int, ...]


class _Tableau:
    """Rows ``0..m-1`` hold ``B^-1 [A | I | art | b]``; row ``m`` holds reduced costs."""

    def __init__(self, T: np.ndarray, basis: list[int], rule: str, max_iter: int):
        self.T = T
        self.basis = basis
        self.rule = rule
        self.max_iter = max_iter
        self.iterations = 0

    def pivot(self, r: int, k: int) -> None:
        T = self.T
        T[r] /= T[r, k]
        col = T[:, k].copy()
        col[r] = 0.0
        # in-place rank-1 update; T.T is the Fortran-ordered view BLAS expects
        out = dger(-1.0, T[r].copy(), col, a=T.T, overwrite_a=1)
        if not np.shares_memory(out, T):
            T[:] = out.T
        self.basis[r] = k

    def run(self, allowed: np.ndarray) -> None:
        T = self.T
        m = T.shape[0] - 1
        degenerate = 0
        bland = self.rule == "bland"
        while True:
            cost = T[m, :-1]
            candidates = np.flatnonzero((cost < -PIVOT_TOL) & allowed)
            if candidates.size == 0:
                return
            if self.iterations >= self.max_iter:
                raise IterationLimit(f"simplex exceeded {self.max_iter} pivots")
            k = candidates[0] if bland else candidates[np.argmin(cost[candidates])]
            column = T[:m, k]
            rows = np.flatnonzero(column > PIVOT_TOL)
            if rows.size == 0:
                raise ValidationError("linear program is unbounded")
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = min(ties, key=lambda i: self.basis[i])
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            if degenerate > DEGENERATE_SWITCH:
                bland = True
            self.pivot(r, k)
            self.iterations += 1


def simplex_minimize(c, A, b, *, rule: str = "dantzig", max_iter: int = 50_000, tol: float = 1e-9) -> LpResult:
    """Solve ``min c^T x`` over ``A x <= b, x >= 0``.

    ``rule="dantzig"`` prices by most negative reduced cost and falls back to
    lowest-index (Bland) pricing after a run of degenerate pivots;
    ``rule="bland"`` uses lowest-index pricing throughout.  Ratio-test ties
    always go to the lowest basic index.  The final basic solution is
    recomputed from the original data with a dense solve.
    """
    if rule not in ("dantzig", "bland"):
        raise ValidationError(f"unknown pricing rule {rule!r}")
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValidationError("inconsistent LP dimensions")

    # standard form [A | I] x' = b, negate rows with b < 0 and give them artificials
    neg = b < 0
    sign = np.where(neg, -1.0, 1.0)
    art_rows = np.flatnonzero(neg)
    k = art_rows.size
    width = n + m + k
    T = np.zeros((m + 1, width + 1))
    T[:m, :n] = sign[:, None] * A
    T[np.arange(m), n + np.arange(m)] = sign
    T[art_rows, n + m + np.arange(k)] = 1.0
    T[:m, -1] = sign * b
    basis = [n + i for i in range(m)]
    for a, i in enumerate(art_rows):
        basis[i] = n + m + a

    tab = _Tableau(T, basis, rule, max_iter)
    all_cols = np.ones(width, dtype=bool)
    if k:
        # phase 1: minimize the sum of artificials
        T[m, n + m :width] = 1.0
        T[m] -= T[art_rows].sum(axis=0)
        tab.run(all_cols)
        scale = max(1.0, float(np.abs(b).max()))
        if -T[m, -1] > tol * scale * 10:
            raise Infeasible(f"no feasible point (phase-1 residual {-T[m, -1]:.3g})")
        # drive zero-level artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if tab.basis[r] >= n + m:
                row = np.abs(T[r, : n + m])
                j = int(np.argmax(row))
                if row[j] > PIVOT_TOL:
                    tab.pivot(r, j)
                else:
                    keep[r] = False
        rows = np.flatnonzero(keep)
        # artificial columns are never priced again
        kept = T[np.append(rows, m)]
        tab.T = np.ascontiguousarray(np.column_stack([kept[:, : n + m], kept[:, -1]]))
        tab.basis = [tab.basis[r] for r in rows]
        width = n + m
    n_std = n + A.shape[0]
    allowed = np.ones(width, dtype=bool)

    # phase 2 on the structural and slack columns
    T = tab.T
    T[-1] = 0.0
    T[-1, :n] = c
    for r, j in enumerate(tab.basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[r]
    tab.run(allowed)

    x_full = np.zeros(width)
    basis = tab.basis
    std = np.hstack([sign[:, None] * A, np.diag(sign)])
    cols = np.array(basis)
    if np.all(cols < n_std) and len(basis) == A.shape[0]:
        try:
            x_full[cols] = np.linalg.solve(std[:, cols], sign * b)
        except np.linalg.LinAlgError:
            x_full[cols] = T[: len(basis), -1]
    else:
        x_full[cols] = T[: len(basis), -1]
    x = np.clip(x_full[:n], 0.0, None)
    return LpResult(x, float(c @ x), tab.iterations, tuple(basis))
