"""High-dimensional aggregation: l1-minimal constraint solutions, CIF oracle, Lasso screening."""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constraints import StackedSystem, assemble, randomization_constraint
from .errors import ScreeningEmpty, TooLarge, ValidationError
from .linear import BetaEstimate, confidence_intervals, solve_just_identified
from .sem import EnvDataset
from .simplex import simplex_minimize

__all__ = [
    "LpProblem",
    "dantzig_aggregate",
    "PathPoint",
    "lambda_path",
    "path_to_csv",
    "theory_lambda_grid",
    "select_lambda",
    "cif",
    "lasso_fit",
    "lasso_cv",
    "prescreen_lasso",
    "ScreenedEstimate",
    "prescreen_then_aggregate",
]

SUPPORT_TOL = 1e-8


# ---------------------------------------------------------------------------
# l1 minimization under sup-norm constraint violation


@dataclass(frozen=True)
class LpProblem:
    """``min 1^T gamma`` over ``A gamma <= b, gamma >= 0`` with ``beta = gamma[:p] - gamma[p:]``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    @classmethod
    def from_arrays(cls, G, Z, lam: float) -> "LpProblem":
        G = np.atleast_2d(np.asarray(G, dtype=float))
        Z = np.asarray(Z, dtype=float)
        if lam < 0:
            raise ValidationError("lambda must be non-negative")
        A = np.block([[-G, G], [G, -G]])
        b = np.concatenate([-Z, Z]) + lam
        return cls(np.ones(2 * G.shape[1]), A, b)

    @classmethod
    def from_system(cls, system: StackedSystem, lam: float) -> "LpProblem":
        return cls.from_arrays(system.G, system.Z, lam)

    @property
    def p(self) -> int:
        return self.c.shape[0] // 2

    def to_beta(self, gamma: np.ndarray) -> np.ndarray:
        return gamma[: self.p] - gamma[self.p :]

    @staticmethod
    def from_beta(beta: np.ndarray) -> np.ndarray:
        return np.concatenate([np.clip(beta, 0, None), np.clip(-beta, 0, None)])

    def feasible(self, gamma: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(gamma >= -tol) and np.all(self.A @ gamma <= self.b + tol))


def dantzig_aggregate(system: StackedSystem | tuple, lam: float, *, rule: str = "dantzig") -> np.ndarray:
    """Minimal-l1 ``beta`` with ``||Z - G beta||_inf <= lam``.

    ``system`` may also be a ``(G, Z)`` pair.
    """
    G, Z = (system.G, system.Z) if isinstance(system, StackedSystem) else system
    lp = LpProblem.from_arrays(G, Z, lam)
    res = simplex_minimize(lp.c, lp.A, lp.b, rule=rule)
    beta = lp.to_beta(res.x)
    beta[np.abs(beta) < 1e-13] = 0.0
    return beta


@dataclass(frozen=True)
class PathPoint:
    lam: float
    beta: np.ndarray
    support: tuple[int, ...]

    @property
    def l1(self) -> float:
        return float(np.abs(self.beta).sum())


def lambda_path(system: StackedSystem | tuple, grid: Sequence[float], **kw) -> list[PathPoint]:
    grid = [float(g) for g in grid]
    if any(a < b for a, b in zip(grid, grid[1:])):
        raise ValidationError("lambda grid must be sorted in descending order")
    out = []
    for lam in grid:
        beta = dantzig_aggregate(system, lam, **kw)
        out.append(PathPoint(lam, beta, tuple(int(j) for j in np.flatnonzero(np.abs(beta) > SUPPORT_TOL))))
    return out


def path_to_csv(path: Sequence[PathPoint], names: Sequence[str] | None = None) -> str:
    p = path[0].beta.shape[0] if path else 0
    names = list(names) if names is not None else [f"X{j + 1}" for j in range(p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "l1_norm", "support_size", *names])
    for pt in path:
        w.writerow([repr(pt.lam), repr(pt.l1), len(pt.support), *(repr(float(b)) for b in pt.beta)])
    return buf.getvalue()


def theory_lambda_grid(p: int, n_min: int, scales: Sequence[float] = tuple(np.geomspace(4.0, 0.05, 20))) -> list[float]:
    """Descending grid ``c * sqrt(log p / n_min)`` over the constants ``scales``."""
    base = math.sqrt(math.log(max(p, 2)) / n_min)
    return sorted((float(c) * base for c in scales), reverse=True)


def select_lambda(
    train: StackedSystem | tuple, validation: StackedSystem | tuple, grid: Sequence[float]
) -> tuple[float, np.ndarray]:
    """Pick the grid value whose training solution best satisfies the validation constraints.

    The score is ``||Z_val - G_val beta(lam)||_inf``; ties go to the larger lambda.
    Grid points with an infeasible training problem are skipped.
    """
    from .errors import Infeasible

    Gv, Zv = (validation.G, validation.Z) if isinstance(validation, StackedSystem) else validation
    best = None
    for lam in sorted(grid, reverse=True):
        try:
            beta = dantzig_aggregate(train, lam)
        except Infeasible:
            continue
        score = float(np.max(np.abs(Zv - Gv @ beta)))
        if best is None or score < best[0] - 1e-12:
            best = (score, lam, beta)
    if best is None:
        raise Infeasible("every grid value is infeasible on the training constraints")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# cone invertibility factor (sampled upper bound, small p only)


def _qnorm(U: np.ndarray, q: float) -> np.ndarray:
    if math.isinf(q):
        return np.abs(U).max(axis=1)
    return np.linalg.norm(U, ord=q, axis=1)


def cif(J: Sequence[int], M, q: float = math.inf, *, samples: int = 1_000_000, seed=0, chunk: int = 100_000) -> float:
    """Sampled upper bound of the cone invertibility factor of ``M`` on support ``J``.

    Minimizes ``|J|^(1/q) ||M u||_inf / ||u||_q`` over random directions in
    the cone ``||u_Jc||_1 <= ||u_J||_1``, every sign pattern supported on J,
    and right-singular directions of M that lie in the cone.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    p = M.shape[1]
    if p > 6:
        raise TooLarge(f"the CIF oracle handles p <= 6, got {p}")
    J = sorted(set(int(j) for j in J))
    if not J or any(not 0 <= j < p for j in J):
        raise ValidationError("J must be a non-empty subset of the covariate indices")
    if q not in (1, 2, math.inf):
        raise ValidationError("q must be 1, 2 or inf")
    Jc = [j for j in range(p) if j not in J]
    factor = len(J) ** (0.0 if math.isinf(q) else 1.0 / q)

    def score(U: np.ndarray) -> float:
        norms = _qnorm(U, q)
        ok = norms > 0
        if not ok.any():
            return math.inf
        return float((np.abs(U[ok] @ M.T).max(axis=1) / norms[ok]).min() * factor)

    best = math.inf
    signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * len(J)), indexing="ij")).reshape(len(J), -1).T
    U = np.zeros((signs.shape[0], p))
    U[:, J] = signs
    best = min(best, score(U))

    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    for v in Vt:
        if np.abs(v[Jc]).sum() <= np.abs(v[J]).sum() + 1e-12:
            best = min(best, score(v[None, :]))

    rng = np.random.default_rng(seed)
    left = samples
    while left > 0:
        k = min(chunk, left)
        left -= k
        U = np.zeros((k, p))
        U[:, J] = rng.standard_normal((k, len(J)))
        if Jc:
            W = rng.standard_normal((k, len(Jc)))
            budget = np.abs(U[:, J]).sum(axis=1) * rng.random(k) ** (1.0 / len(Jc))
            # a fifth of the draws sit on the cone boundary
            budget[: k // 5] = np.abs(U[: k // 5, J]).sum(axis=1)
            U[:, Jc] = W * (budget / np.abs(W).sum(axis=1))[:, None]
        best = min(best, score(U))
    return float(best)


# ---------------------------------------------------------------------------
# Lasso by cyclic coordinate descent


def _standardize(X: np.ndarray, y: np.ndarray):
    mx = X.mean(axis=0)
    sx = X.std(axis=0)
    live = sx > 0
    Xs = np.zeros_like(X)
    Xs[:, live] = (X[:, live] - mx[live]) / sx[live]
    my = y.mean()
    return Xs, y - my, mx, sx, my, live


def _cd_gram(Q: np.ndarray, c: np.ndarray, lam: float, b: np.ndarray, live: np.ndarray, tol: float, max_sweeps: int):
    """Coordinate descent on ``(1/2) b^T Q b - c^T b + lam ||b||_1`` with unit diagonal.

    Full sweeps alternate with sweeps over the current active set until a
    full sweep changes no coefficient by more than ``tol``.
    """
    q = Q @ b
    idx_all = np.flatnonzero(live)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in idx_all:
            rho = c[j] - q[j] + b[j]
            new = math.copysign(max(abs(rho) - lam, 0.0), rho)
            d = new - b[j]
            if d != 0.0:
                q += d * Q[:, j]
                b[j] = new
                max_delta = max(max_delta, abs(d))
        if max_delta < tol:
            return b
        active = np.flatnonzero(b != 0.0)
        for _ in range(max_sweeps):
            inner = 0.0
            for j in active:
                rho = c[j] - q[j] + b[j]
                new = math.copysign(max(abs(rho) - lam, 0.0), rho)
                d = new - b[j]
                if d != 0.0:
                    q += d * Q[:, j]
                    b[j] = new
                    inner = max(inner, abs(d))
            if inner < tol:
                break
    return b


@dataclass(frozen=True)
class LassoFit:
    """Coefficients on the standardized scale (``coef_std``) and on the original scale."""

    lam: float
    coef_std: np.ndarray
    coef: np.ndarray
    intercept: float

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(np.abs(self.coef_std) > SUPPORT_TOL))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.coef


def _lasso_path(X, y, lambdas, tol=1e-7, max_sweeps=10_000) -> list[LassoFit]:
    Xs, yc, mx, sx, my, live = _standardize(np.asarray(X, float), np.asarray(y, float))
    n = Xs.shape[0]
    Q = Xs.T @ Xs / n
    c = Xs.T @ yc / n
    b = np.zeros(Xs.shape[1])
    fits = []
    for lam in lambdas:
        b = _cd_gram(Q, c, float(lam), b.copy(), live, tol, max_sweeps)
        coef = np.where(live, b / np.where(live, sx, 1.0), 0.0)
        fits.append(LassoFit(float(lam), b.copy(), coef, float(my - mx @ coef)))
    return fits


def lambda_max(X, y) -> float:
    Xs, yc, *_ = _standardize(np.asarray(X, float), np.asarray(y, float))
    return float(np.max(np.abs(Xs.T @ yc)) / Xs.shape[0]) if Xs.shape[1] else 0.0


def lasso_fit(X, y, lam: float, *, tol: float = 1e-7) -> LassoFit:
    """Lasso of ``y`` on internally standardized ``X``: ``(1/2n)||y - Xb||^2 + lam ||b||_1``."""
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    lmax = lambda_max(X, y)
    # warm start down a short path for stability at small lambda
    grid = [v for v in np.geomspace(max(lmax, lam), max(lam, 1e-12), 5)] if lam < lmax else [lam]
    return _lasso_path(X, y, grid, tol=tol)[-1]


@dataclass(frozen=True)
class LassoCV:
    lambdas: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lam_min: float
    lam_1se: float
    fit: LassoFit


def lasso_cv(X, y, *, folds: int = 5, n_lambda: int = 50, ratio: float = 1e-3, seed=0, tol: float = 1e-7) -> LassoCV:
    """K-fold CV over a log grid from lambda_max down to ``ratio * lambda_max``; one-SE choice."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n = X.shape[0]
    if n < 2 * folds:
        raise ValidationError("too few rows for cross-validation")
    lmax = lambda_max(X, y)
    if lmax == 0:
        fit = _lasso_path(X, y, [0.0])[0]
        z = np.zeros(1)
        return LassoCV(z, z, z, 0.0, 0.0, fit)
    lambdas = np.geomspace(lmax, ratio * lmax, n_lambda)
    assign = np.random.default_rng(seed).permutation(n) % folds
    errs = np.zeros((folds, n_lambda))
    for k in range(folds):
        tr, te = assign != k, assign == k
        for i, f in enumerate(_lasso_path(X[tr], y[tr], lambdas, tol=tol)):
            errs[k, i] = np.mean((y[te] - f.predict(X[te])) ** 2)
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / math.sqrt(folds)
    i_min = int(np.argmin(mean))
    i_1se = int(np.flatnonzero(mean <= mean[i_min] + se[i_min])[0])
    fit = _lasso_path(X, y, lambdas[: i_1se + 1], tol=tol)[-1]
    return LassoCV(lambdas, mean, se, float(lambdas[i_min]), float(lambdas[i_1se]), fit)


def prescreen_lasso(obs_data: EnvDataset, lam: float | str = "cv", *, folds: int = 5, seed=0) -> tuple[int, ...]:
    """Covariates with a non-zero Lasso coefficient in the regression of Y on X."""
    if isinstance(lam, str):
        if lam != "cv":
            raise ValidationError("lam must be a number or 'cv'")
        fit = lasso_cv(obs_data.X, obs_data.Y, folds=folds, seed=seed).fit
    else:
        fit = lasso_fit(obs_data.X, obs_data.Y, float(lam))
    return fit.support


# ---------------------------------------------------------------------------
# screening followed by experiments on the selected covariates


@dataclass(frozen=True)
class ScreenedEstimate:
    selected: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]
    estimate: BetaEstimate
    beta: np.ndarray
    system: StackedSystem

    def intervals(self, alpha: float = 0.05) -> list[tuple[float, float] | None]:
        """Intervals on the full index set; unselected covariates get ``None``."""
        out: list[tuple[float, float] | None] = [None] * self.beta.shape[0]
        for j, ci in zip(self.selected, confidence_intervals(self.estimate, alpha)):
            out[j] = ci
        return out


def prescreen_then_aggregate(
    obs_data: EnvDataset,
    experiment_builder: Callable[[Sequence[Sequence[int]]], Sequence[EnvDataset]],
    *,
    lam: float | str = "cv",
    seed=0,
) -> ScreenedEstimate:
    """Screen with the Lasso, then aggregate randomization constraints on the selected set.

    ``experiment_builder(groups)`` must return one fresh dataset per group,
    each randomizing exactly the covariates of its group (full covariate
    indexing).  The selection is split into two halves by position.
    """
    selected = prescreen_lasso(obs_data, lam, seed=seed)
    if not selected:
        raise ScreeningEmpty("the Lasso selected no covariates")
    half = (len(selected) + 1) // 2
    groups = tuple(g for g in (tuple(selected[:half]), tuple(selected[half:])) if g)
    envs = list(experiment_builder(groups))
    if len(envs) != len(groups):
        raise ValidationError("experiment builder must return one dataset per group")
    reduced = []
    for d, grp in zip(envs, groups):
        if d is obs_data:
            raise ValidationError("experimental data must be fresh, not the screening data")
        if not set(grp) <= d.spec.randomized:
            raise ValidationError(f"environment {d.env_id!r} does not randomize its group")
        reduced.append(d.restrict(selected))
    pos = {k: i for i, k in enumerate(selected)}
    cons = [randomization_constraint(r, pos[j]) for r, grp in zip(reduced, groups) for j in grp]
    system = assemble(cons, datasets=reduced)
    est = solve_just_identified(system)
    beta = np.zeros(obs_data.p)
    beta[list(selected)] = est.beta
    return ScreenedEstimate(tuple(selected), groups, est, beta, system)
