"""Empirical linear causal constraints ``g @ beta = z`` and their stacked system."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingColumn,
    NotRandomized,
    NotShifted,
    RandomizedTarget,
    SampleReuse,
    SingularDesign,
    ValidationError,
)
from .sem import EnvDataset

__all__ = [
    "IV",
    "RANDOMIZATION",
    "ADJUSTMENT",
    "INNER_PRODUCT",
    "Constraint",
    "EnvMoments",
    "StackedSystem",
    "Diagnosis",
    "randomization_constraint",
    "iv_constraint",
    "adjustment_constraint",
    "adjustment_constraint_in_sample",
    "constraints_from_annotations",
    "inner_product_constraint",
    "assemble",
    "system_from_arrays",
    "check_identifiability",
]

IV = "IV"
RANDOMIZATION = "RANDOMIZATION"
ADJUSTMENT = "ADJUSTMENT"
INNER_PRODUCT = "INNER_PRODUCT"

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Constraint:
    kind: str
    env_id: str | tuple[str, str]
    g: np.ndarray
    z: float
    r_samples: np.ndarray | None = None
    related_covariate: int | None = None
    n: int = 0
    label: str = ""
    # moments of (X, Y) with the adjusted parents projected out (in-sample adjustment only)
    residual_moments: "EnvMoments | None" = None

    @property
    def p(self) -> int:
        return self.g.shape[0]

    @property
    def host_env(self) -> str:
        """Environment whose rows carry the constraint (the shifted one for inner products)."""
        return self.env_id[0] if isinstance(self.env_id, tuple) else self.env_id

    @property
    def r_variance(self) -> float:
        if self.r_samples is None:
            return float("nan")
        return float(np.var(self.r_samples))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "env_id": list(self.env_id) if isinstance(self.env_id, tuple) else self.env_id,
            "g": [float(v) for v in self.g],
            "z": float(self.z),
            "n": self.n,
            "label": self.label,
            "related_covariate": self.related_covariate,
        }
        if self.r_samples is not None:
            r = self.r_samples
            d["r_summary"] = {"mean": float(r.mean()), "var": float(r.var()), "min": float(r.min()), "max": float(r.max())}
        return d


def _moments(R: np.ndarray, data: EnvDataset) -> tuple[np.ndarray, float]:
    n = data.n
    return R @ data.X / n, float(R @ data.Y / n)


def randomization_constraint(data: EnvDataset, j: int) -> Constraint:
    if j not in data.spec.randomized:
        raise NotRandomized(f"covariate {j} is not randomized in environment {data.env_id!r}")
    R = data.X[:, j].copy()
    g, z = _moments(R, data)
    return Constraint(RANDOMIZATION, data.env_id, g, z, R, j, data.n, f"rand {data.covariate_names[j]}")


def iv_constraint(data: EnvDataset, instrument: str) -> Constraint:
    if instrument not in data.columns[data.p + 1 :]:
        raise MissingColumn(f"environment {data.env_id!r} has no instrument column {instrument!r}")
    R = data.column(instrument).copy()
    g, z = _moments(R, data)
    related = None
    sd_r = R.std()
    sd_x = data.X.std(axis=0)
    if sd_r > 0 and np.any(sd_x > 0):
        cov = (R - R.mean()) @ (data.X - data.X.mean(axis=0)) / data.n
        corr = np.where(sd_x > 0, np.abs(cov) / (sd_r * np.where(sd_x > 0, sd_x, 1.0)), 0.0)
        related = int(np.argmax(corr))
    return Constraint(IV, data.env_id, g, z, R, related, data.n, f"iv {instrument}")


def _adjust(fit_data: EnvDataset, eval_data: EnvDataset, j: int, parents: Sequence[int]) -> Constraint:
    for d in (fit_data, eval_data):
        if j in d.spec.randomized:
            raise RandomizedTarget(f"covariate {j} is randomized in environment {d.env_id!r}")
    parents = sorted(int(k) for k in parents)
    if j in parents:
        raise ValidationError(f"covariate {j} listed among its own parents")
    Zfit = np.column_stack([np.ones(fit_data.n), fit_data.X[:, parents]])
    coef, _, rank, _ = np.linalg.lstsq(Zfit, fit_data.X[:, j], rcond=None)
    if rank < Zfit.shape[1]:
        raise SingularDesign(f"parent design for covariate {j} is rank-deficient on {fit_data.env_id!r}")
    Zeval = np.column_stack([np.ones(eval_data.n), eval_data.X[:, parents]])
    R = eval_data.X[:, j] - Zeval @ coef
    g, z = _moments(R, eval_data)
    projected = None
    if fit_data is eval_data:
        XY = eval_data.data[:, : eval_data.p + 1]
        resid = XY - Zeval @ np.linalg.lstsq(Zeval, XY, rcond=None)[0]
        n = eval_data.n
        projected = EnvMoments(n, float(resid[:, -1] @ resid[:, -1] / n), resid[:, :-1].T @ resid[:, -1] / n, resid[:, :-1].T @ resid[:, :-1] / n)
    return Constraint(
        ADJUSTMENT, eval_data.env_id, g, z, R, j, eval_data.n, f"adj {eval_data.covariate_names[j]}", projected
    )


def adjustment_constraint(
    fit_data: EnvDataset, eval_data: EnvDataset, j: int, parents: Sequence[int]
) -> Constraint:
    """Regression-adjustment constraint for covariate ``j`` with declared ``parents``.

    The first stage (OLS with intercept of X_j on X_parents) runs on
    ``fit_data``; residuals and moments are computed on ``eval_data`` only.
    """
    if fit_data is eval_data or fit_data.env_id == eval_data.env_id:
        raise SampleReuse("adjustment constraints need distinct fit and evaluation datasets")
    return _adjust(fit_data, eval_data, j, parents)


def adjustment_constraint_in_sample(data: EnvDataset, j: int, parents: Sequence[int]) -> Constraint:
    """Adjustment constraint whose first stage is fit on the evaluation rows themselves.

    In-sample residuals are orthogonal to the parents, so the first-stage
    error drops out of the moment to first order.  The moment's variance is
    then Var(R) times the variance of the structural residual *after*
    projecting out the parents; those projected moments are stored on the
    constraint and used in place of the environment's residual variance.
    """
    return _adjust(data, data, j, parents)


def inner_product_constraint(base: EnvDataset, shifted: EnvDataset, j: int) -> Constraint:
    if j not in shifted.spec.additive_shift:
        raise NotShifted(f"covariate {j} is not shifted in environment {shifted.env_id!r}")
    g = shifted.X[:, j] @ shifted.X / shifted.n - base.X[:, j] @ base.X / base.n
    z = float(shifted.X[:, j] @ shifted.Y / shifted.n - base.X[:, j] @ base.Y / base.n)
    return Constraint(
        INNER_PRODUCT, (shifted.env_id, base.env_id), g, z, None, j, shifted.n, f"shift {shifted.covariate_names[j]}"
    )


@dataclass(frozen=True)
class EnvMoments:
    """Second moments of one environment, enough to evaluate mean squared residuals."""

    n: int
    yy: float
    xy: np.ndarray
    xx: np.ndarray

    @classmethod
    def of(cls, data: EnvDataset) -> "EnvMoments":
        X, Y, n = data.X, data.Y, data.n
        return cls(n, float(Y @ Y / n), X.T @ Y / n, X.T @ X / n)

    def residual_variance(self, beta: np.ndarray) -> float:
        """(1/n_e) * sum (Y - beta^T X)^2, clipped at zero against round-off."""
        v = self.yy - 2.0 * float(beta @ self.xy) + float(beta @ self.xx @ beta)
        return max(v, 0.0)


@dataclass(frozen=True)
class StackedSystem:
    G: np.ndarray
    Z: np.ndarray
    D: np.ndarray
    r_var: np.ndarray
    row_env: tuple[str, ...]
    env_sizes: Mapping[str, int]
    env_moments: Mapping[str, EnvMoments]
    constraints: tuple[Constraint, ...] = ()
    kinds: tuple[str, ...] = ()
    rank: int = 0
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # per-row overrides of the environment moments (None: use the environment's)
    row_moments: tuple = ()

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return int(sum(self.env_sizes.values()))

    @property
    def rho(self) -> np.ndarray:
        """Per-row share n_{e_c} / n (same as ``D``)."""
        return self.D

    @property
    def has_inner_product(self) -> bool:
        return INNER_PRODUCT in self.kinds

    @property
    def condition_number(self) -> float:
        s = self.singular_values
        if s.size == 0 or s[-1] == 0:
            return float("inf")
        return float(s[0] / s[-1])

    def residual_variances(self, beta: np.ndarray) -> dict[str, float]:
        return {e: self.env_moments[e].residual_variance(beta) for e in self.env_moments}

    def row_sigma2(self, beta: np.ndarray) -> np.ndarray:
        s2 = self.residual_variances(beta)
        out = np.array([s2.get(e, np.nan) for e in self.row_env])
        for i, m in enumerate(self.row_moments):
            if m is not None:
                out[i] = m.residual_variance(beta)
        return out


def _rank(G: np.ndarray) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(G, compute_uv=False) if G.size else np.zeros(0)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > RANK_RTOL * s[0])), s


def assemble(
    constraints: Sequence[Constraint],
    sizes: Mapping[str, int] | None = None,
    datasets: Sequence[EnvDataset] | Mapping[str, EnvDataset] | None = None,
) -> StackedSystem:
    """Stack constraints in input order.

    ``sizes`` maps environment id to n_e; when omitted it is taken from the
    constraints' host environments.  ``datasets`` supplies the rows used for
    the per-environment residual variances.
    """
    if not constraints:
        raise ValidationError("cannot assemble an empty constraint list")
    p = constraints[0].p
    for c in constraints:
        if c.p != p:
            raise DimensionMismatch(f"constraint {c.label!r} has length {c.p}, expected {p}")
    if isinstance(datasets, Mapping):
        datasets = list(datasets.values())
    by_env = {d.env_id: d for d in (datasets or [])}
    for d in by_env.values():
        if d.p != p:
            raise DimensionMismatch(f"dataset {d.env_id!r} has {d.p} covariates, expected {p}")
    if sizes is None:
        sizes = {}
        for c in constraints:
            sizes.setdefault(c.host_env, c.n)
    sizes = {str(k): int(v) for k, v in sizes.items()}
    row_env = tuple(c.host_env for c in constraints)
    missing = set(row_env) - set(sizes)
    if missing:
        raise ValidationError(f"no sample size given for environments {sorted(missing)}")
    n = sum(sizes.values())
    G = np.vstack([c.g for c in constraints]).astype(float)
    Z = np.array([c.z for c in constraints], dtype=float)
    D = np.array([sizes[e] / n for e in row_env])
    r_var = np.array([c.r_variance for c in constraints])
    moments = {e: EnvMoments.of(by_env[e]) for e in dict.fromkeys(row_env) if e in by_env}
    rank, s = _rank(G)
    return StackedSystem(
        G=G,
        Z=Z,
        D=D,
        r_var=r_var,
        row_env=row_env,
        env_sizes=sizes,
        env_moments=moments,
        constraints=tuple(constraints),
        kinds=tuple(c.kind for c in constraints),
        rank=rank,
        singular_values=s,
        row_moments=tuple(c.residual_moments for c in constraints),
    )


def system_from_arrays(
    G,
    Z,
    *,
    sizes: Sequence[int] | None = None,
    r_var: Sequence[float] | None = None,
    sigma2: Sequence[float] | None = None,
    row_env: Sequence[str] | None = None,
    kinds: Sequence[str] | None = None,
) -> StackedSystem:
    """Build a system directly from (G, Z) with synthetic bookkeeping.

    Each row gets its own environment unless ``row_env`` says otherwise;
    ``sigma2`` fixes each environment's residual variance independently of beta.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Z = np.atleast_1d(np.asarray(Z, dtype=float))
    m, p = G.shape
    if Z.shape != (m,):
        raise DimensionMismatch("Z must have one entry per row of G")
    row_env = tuple(row_env) if row_env is not None else tuple(f"c{i}" for i in range(m))
    envs = list(dict.fromkeys(row_env))
    sizes = list(sizes) if sizes is not None else [100] * len(envs)
    sigma2 = list(sigma2) if sigma2 is not None else [1.0] * len(envs)
    env_sizes = dict(zip(envs, sizes))
    n = sum(env_sizes.values())
    moments = {e: EnvMoments(env_sizes[e], float(s2), np.zeros(p), np.zeros((p, p))) for e, s2 in zip(envs, sigma2)}
    rank, s = _rank(G)
    return StackedSystem(
        G=G,
        Z=Z,
        D=np.array([env_sizes[e] / n for e in row_env]),
        r_var=np.asarray(r_var, dtype=float) if r_var is not None else np.ones(m),
        row_env=row_env,
        env_sizes=env_sizes,
        env_moments=moments,
        kinds=tuple(kinds) if kinds is not None else (RANDOMIZATION,) * m,
        rank=rank,
        singular_values=s,
    )


IDENTIFIABLE = "IDENTIFIABLE"
UNDERIDENTIFIED = "UNDERIDENTIFIED"


@dataclass(frozen=True)
class Diagnosis:
    rank: int
    p: int
    n_constraints: int
    singular_values: tuple[float, ...]
    condition_number: float
    identifiable: bool
    covered: bool | None
    uncovered: tuple[int, ...]
    heuristic: bool

    @property
    def status(self) -> str:
        return IDENTIFIABLE if self.identifiable else UNDERIDENTIFIED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "rank": self.rank,
            "p": self.p,
            "n_constraints": self.n_constraints,
            "condition_number": self.condition_number if np.isfinite(self.condition_number) else None,
            "singular_values": list(self.singular_values),
            "related_covariates_cover_all": self.covered,
            "uncovered_covariates": list(self.uncovered),
            "coverage_check_heuristic": self.heuristic,
        }


def check_identifiability(system: StackedSystem) -> Diagnosis:
    """Numerical rank of G plus the distinct-related-constraint coverage check.

    The coverage check is only a sufficient condition; it is flagged as
    heuristic whenever an instrument row is involved.
    """
    related = [c.related_covariate for c in system.constraints]
    covered, uncovered = None, ()
    if related and all(r is not None for r in related):
        uncovered = tuple(sorted(set(range(system.p)) - set(related)))
        covered = not uncovered
    return Diagnosis(
        rank=system.rank,
        p=system.p,
        n_constraints=system.m,
        singular_values=tuple(float(s) for s in system.singular_values),
        condition_number=system.condition_number,
        identifiable=system.rank == system.p,
        covered=covered,
        uncovered=uncovered,
        heuristic=IV in system.kinds,
    )


ADJUST_SAME = "same"
ADJUST_OTHER = "other"


def constraints_from_annotations(
    datasets: Sequence[EnvDataset], adjustment_fit: str = ADJUST_SAME
) -> tuple[list[Constraint], list[str]]:
    """Every constraint implied by the environments' annotations, plus warnings.

    Per environment, in order: one constraint per instrument, per randomized
    covariate, per known-parents entry and per shifted covariate.  With
    ``adjustment_fit="other"`` the first stage of an adjustment runs on the
    next environment (cyclically) where the target is not randomized; the
    constraint is skipped with a warning when no such environment exists.
    """
    if adjustment_fit not in (ADJUST_SAME, ADJUST_OTHER):
        raise ValidationError(f"unknown adjustment_fit {adjustment_fit!r}")
    by_id = {d.env_id: d for d in datasets}
    out: list[Constraint] = []
    warnings: list[str] = []
    k = len(datasets)
    for i, d in enumerate(datasets):
        spec = d.spec
        for inst in spec.instrument_names:
            out.append(iv_constraint(d, inst))
        for j in sorted(spec.randomized):
            out.append(randomization_constraint(d, j))
        for j, parents in sorted(spec.known_parents.items()):
            if j in spec.randomized:
                continue
            if adjustment_fit == ADJUST_SAME:
                out.append(adjustment_constraint_in_sample(d, j, parents))
                continue
            fit = next(
                (datasets[(i + s) % k] for s in range(1, k) if j not in datasets[(i + s) % k].spec.randomized),
                None,
            )
            if fit is None:
                warnings.append(f"skipped adjustment for covariate {j} in {d.env_id!r}: no fitting environment")
                continue
            out.append(adjustment_constraint(fit, d, j, parents))
        for j in sorted(spec.additive_shift):
            if spec.base_env is None or spec.base_env not in by_id:
                raise ValidationError(f"environment {d.env_id!r} shifts covariates but names no base environment")
            out.append(inner_product_constraint(by_id[spec.base_env], d, j))
    return out, warnings
