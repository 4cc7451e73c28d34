"""Just-identified and method-of-moments estimation of the causal vector, with inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .constraints import StackedSystem
from .errors import (
    DegenerateConstraint,
    NonPDWeight,
    NotSquare,
    RankDeficient,
    SingularG,
    ValidationError,
)
from .sem import EnvDataset

__all__ = [
    "JUST_IDENTIFIED",
    "GMM_IDENTITY",
    "GMM_WEIGHTED",
    "GMM_TWO_STEP",
    "POOLED_OLS",
    "BetaEstimate",
    "solve_just_identified",
    "confidence_intervals",
    "gaussian_quantile",
    "gmm_estimate",
    "two_step_gmm",
    "ols_estimate",
]

JUST_IDENTIFIED = "JUST_IDENTIFIED"
GMM_IDENTITY = "GMM_IDENTITY"
GMM_WEIGHTED = "GMM_WEIGHTED"
GMM_TWO_STEP = "GMM_TWO_STEP"
POOLED_OLS = "POOLED_OLS"

COND_LIMIT = 1e12
DEGENERATE_FLOOR = 1e-12


@dataclass(frozen=True)
class BetaEstimate:
    """Point estimate with the covariance of ``sqrt(n) * (beta_hat - beta)``.

    ``covariance`` is all-NaN when no variance formula applies (for example
    when inner-product rows are part of the system).
    """

    beta: np.ndarray
    covariance: np.ndarray
    n: int
    method: str
    sigma2: Mapping[str, float] = field(default_factory=dict)
    condition_number: float = float("nan")

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None) / self.n)

    def to_dict(self, alpha: float = 0.05, names: Sequence[str] | None = None) -> dict:
        names = list(names) if names is not None else [f"X{j + 1}" for j in range(self.p)]
        ci = confidence_intervals(self, alpha)
        fin = lambda v: float(v) if np.isfinite(v) else None  # noqa: E731
        return {
            "method": self.method,
            "n": self.n,
            "alpha": alpha,
            "covariates": names,
            "beta": [fin(b) for b in self.beta],
            "ci": [[fin(lo), fin(hi)] for lo, hi in ci],
            "sigma2": {k: fin(v) for k, v in sorted(self.sigma2.items())},
            "condition_number": fin(self.condition_number),
        }


def gaussian_quantile(prob: float) -> float:
    return NormalDist().inv_cdf(prob)


def confidence_intervals(estimate: BetaEstimate, alpha: float = 0.05) -> list[tuple[float, float]]:
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    q = gaussian_quantile(1.0 - alpha / 2.0)
    half = q * np.sqrt(np.clip(np.diag(estimate.covariance), 0.0, None) / estimate.n)
    half = np.where(np.isnan(np.diag(estimate.covariance)), np.nan, half)
    return [(float(b - h), float(b + h)) for b, h in zip(estimate.beta, half)]


def _variance_ready(system: StackedSystem) -> bool:
    return (
        not system.has_inner_product
        and np.all(np.isfinite(system.r_var))
        and all(e in system.env_moments for e in system.row_env)
    )


def _nan_cov(p: int) -> np.ndarray:
    return np.full((p, p), np.nan)


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def solve_just_identified(system: StackedSystem) -> BetaEstimate:
    G, Z = system.G, system.Z
    if system.m != system.p:
        raise NotSquare(f"just-identified solve needs a square system, got {system.m}x{system.p}")
    cond = system.condition_number
    if not cond <= COND_LIMIT:
        raise SingularG(f"G is numerically singular (condition number {cond:.3g})")
    beta = np.linalg.solve(G, Z)
    sigma2 = system.residual_variances(beta)
    cov = _nan_cov(system.p)
    if _variance_ready(system):
        n = system.n
        n_rows = np.array([system.env_sizes[e] for e in system.row_env], dtype=float)
        v = n * system.row_sigma2(beta) * system.r_var / n_rows
        Ginv = np.linalg.solve(G, np.eye(system.p))
        cov = _symmetrize(Ginv @ (v[:, None] * Ginv.T))
    return BetaEstimate(beta, cov, system.n, JUST_IDENTIFIED, sigma2, cond)


def _check_rank(system: StackedSystem) -> None:
    if system.rank < system.p:
        raise RankDeficient(f"G has rank {system.rank} < p = {system.p}")


def _moment_covariance(system: StackedSystem, beta: np.ndarray) -> np.ndarray:
    """Diagonal of the covariance of sqrt(n) * D (Z - G beta0): rho * Var(R) * sigma2."""
    return system.D * system.r_var * system.row_sigma2(beta)


def gmm_estimate(system: StackedSystem, W, *, method: str | None = None) -> BetaEstimate:
    """Minimize ``|| D (Z - G beta) ||_W^2`` in closed form."""
    _check_rank(system)
    W = np.asarray(W, dtype=float)
    if W.shape != (system.m, system.m):
        raise ValidationError(f"weighting matrix must be {system.m}x{system.m}")
    W = _symmetrize(W)
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise NonPDWeight("weighting matrix is not positive definite") from None
    M = system.D[:, None] * system.G
    MW = M.T @ W
    A = MW @ M
    beta = np.linalg.solve(A, MW @ (system.D * system.Z))
    if method is None:
        method = GMM_IDENTITY if np.allclose(W, W[0, 0] * np.eye(system.m)) else GMM_WEIGHTED
    cov = _nan_cov(system.p)
    if _variance_ready(system):
        S = _moment_covariance(system, beta)
        Ainv = np.linalg.solve(A, np.eye(system.p))
        meat = MW @ (S[:, None] * MW.T)
        cov = _symmetrize(Ainv @ meat @ Ainv)
    return BetaEstimate(beta, cov, system.n, method, system.residual_variances(beta), system.condition_number)


def two_step_gmm(system: StackedSystem) -> BetaEstimate:
    """Identity-weighted first step, then re-solve with the inverse moment covariance."""
    if not _variance_ready(system):
        raise ValidationError("two-step weighting needs constraint-inducing samples for every row")
    first = gmm_estimate(system, np.eye(system.m))
    s = _moment_covariance(system, first.beta)
    scale = system.r_var * system.row_sigma2(first.beta)
    if np.any(~(scale >= DEGENERATE_FLOOR)):
        bad = [system.constraints[i].label if system.constraints else i for i in np.flatnonzero(~(scale >= DEGENERATE_FLOOR))]
        raise DegenerateConstraint(f"constraints with vanishing variance: {bad}")
    est = gmm_estimate(system, np.diag(1.0 / s), method=GMM_TWO_STEP)
    w = system.D / (system.r_var * system.row_sigma2(est.beta))
    info = system.G.T @ (w[:, None] * system.G)
    cov = _symmetrize(np.linalg.solve(info, np.eye(system.p)))
    return BetaEstimate(est.beta, cov, system.n, GMM_TWO_STEP, est.sigma2, system.condition_number)


def ols_estimate(datasets: EnvDataset | Sequence[EnvDataset], covariates: Sequence[int] | None = None) -> BetaEstimate:
    """Least squares with intercept on pooled rows; classical homoscedastic errors.

    Returns slopes for ``covariates`` (all by default) with the covariance
    scaled by n so that the usual interval formula applies.
    """
    if isinstance(datasets, EnvDataset):
        datasets = [datasets]
    X = np.vstack([d.X for d in datasets])
    Y = np.concatenate([d.Y for d in datasets])
    if covariates is not None:
        X = X[:, list(covariates)]
    n, k = X.shape
    if n <= k + 1:
        raise ValidationError("too few rows for least squares")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean()
    gram = Xc.T @ Xc
    cond = np.linalg.cond(gram) if k else 1.0
    if not cond <= COND_LIMIT**2:
        raise SingularG("pooled design is numerically singular")
    beta = np.linalg.solve(gram, Xc.T @ Yc) if k else np.zeros(0)
    resid = Yc - Xc @ beta
    s2 = float(resid @ resid / (n - k - 1))
    cov = n * s2 * np.linalg.solve(gram, np.eye(k)) if k else np.zeros((0, 0))
    return BetaEstimate(beta, _symmetrize(cov), n, POOLED_OLS, {"pooled": s2}, float(np.sqrt(cond)))
