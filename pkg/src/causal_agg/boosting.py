"""Non-linear aggregation of randomized environments with tree ensembles.

Each environment ``e`` contributes an additive component that reads only its
randomized covariates.  ``boost`` grows all components jointly, re-weighting
the per-environment trees every round so that the residual stays
uncorrelated with each environment's fitted direction; ``backfit`` and
``single_pass_backfit`` are the refit-one-component-at-a-time baselines.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import NoRandomizedFeatures, ValidationError
from .sem import EnvDataset
from .trees import RegressionTree, TreeFitter

__all__ = [
    "BoostConfig",
    "Component",
    "AggregateModel",
    "alpha_objective",
    "solve_alpha",
    "solve_alpha_moments",
    "boost",
    "backfit",
    "single_pass_backfit",
    "downstream_order",
    "pooled_forest",
    "oracle_l2_loss",
    "orthogonality_score",
]


@dataclass(frozen=True)
class BoostConfig:
    eta: float = 0.1
    nu: float = 1.0
    delta0: float = 1e-3
    max_depth: int = 3
    min_leaf: int = 10
    max_rounds: int = 500
    val_fraction: float = 0.2
    # component refits in the backfitting baselines are small L2-boosted ensembles
    component_rounds: int = 200
    component_patience: int = 20
    backfit_rounds: int = 30
    # pooled baseline: bagged deep trees on all covariates
    forest_trees: int = 50
    forest_depth: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0 or self.nu < 0 or self.delta0 < 0:
            raise ValidationError("need eta > 0, nu >= 0 and delta0 >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must lie in [0, 1)")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoostConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown boosting options {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Component:
    """``f_e(x) = offset + sum_k weight_k * tree_k(x[features])``."""

    env_id: str
    features: tuple[int, ...]
    terms: tuple[tuple[float, RegressionTree], ...] = ()
    offset: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.offset)
        if self.terms:
            F = X[:, list(self.features)]
            for w, tree in self.terms:
                out += w * tree.predict_local(F)
        return out

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "features": list(self.features),
            "offset": self.offset,
            "terms": [{"weight": w, "tree": t.to_dict()} for w, t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Component":
        return cls(
            d["env_id"],
            tuple(int(f) for f in d["features"]),
            tuple((float(t["weight"]), RegressionTree.from_dict(t["tree"])) for t in d["terms"]),
            float(d.get("offset", 0.0)),
        )


@dataclass(frozen=True)
class AggregateModel:
    components: tuple[Component, ...]
    config: BoostConfig
    method: str
    rounds: int = 0
    converged: bool = False
    gaps: tuple[float, ...] = field(default=(), repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for c in self.components:
            out += c.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rounds": self.rounds,
            "converged": self.converged,
            "gaps": list(self.gaps),
            "config": self.config.to_dict(),
            "components": [c.to_dict() for c in self.components],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateModel":
        return cls(
            tuple(Component.from_dict(c) for c in d["components"]),
            BoostConfig.from_dict(d["config"]),
            d["method"],
            int(d.get("rounds", 0)),
            bool(d.get("converged", False)),
            tuple(d.get("gaps", ())),
        )


# ---------------------------------------------------------------------------
# re-weighting step


def alpha_objective(A: np.ndarray, b: np.ndarray, alpha: np.ndarray, nu: float) -> float:
    """``sum_e |b_e - (A alpha)_e| + nu ||alpha||^2``."""
    return float(np.abs(b - A @ alpha).sum() + nu * alpha @ alpha)


def _moments(residuals, h_matrix):
    E = len(residuals)
    A = np.empty((E, E))
    b = np.empty(E)
    for e in range(E):
        own = np.asarray(h_matrix[e][e], dtype=float)
        n = own.shape[0]
        b[e] = float(np.asarray(residuals[e]) @ own) / n
        for t in range(E):
            A[e, t] = float(np.asarray(h_matrix[e][t]) @ own) / n
    return A, b


def _subgradient(A, b, nu, max_iter=10_000, patience=50):
    E = b.shape[0]
    L = float(np.linalg.norm(A, 2)) if A.size else 0.0
    step0 = 1.0 / (nu + L) if nu + L > 0 else 1.0
    alpha = np.zeros(E)
    best_a, best_f = alpha.copy(), alpha_objective(A, b, alpha, nu)
    stall = 0
    for t in range(max_iter):
        g = -A.T @ np.sign(b - A @ alpha) + 2.0 * nu * alpha
        alpha = alpha - step0 * 0.99**t * g
        f = alpha_objective(A, b, alpha, nu)
        if f < best_f - 1e-9:
            best_a, best_f, stall = alpha.copy(), f, 0
        else:
            if f < best_f:
                best_a, best_f = alpha.copy(), f
            stall += 1
            if stall >= patience:
                break
    return best_a


def _kkt_candidates(A, b, nu):
    """Stationary points of every (active set, sign pattern) piece of the objective."""
    E = b.shape[0]
    out = [np.zeros(E)]
    for pattern in itertools.product((-1, 0, 1), repeat=E):
        s = np.array(pattern, dtype=float)
        act = s == 0
        A_act = A[act]
        if nu > 0:
            base = A.T @ s / (2.0 * nu)  # s is 0 on active rows
            if act.any():
                K = A_act @ A_act.T / (2.0 * nu)
                mu = np.linalg.lstsq(K, b[act] - A_act @ base, rcond=None)[0]
                out.append(base + A_act.T @ mu / (2.0 * nu))
            else:
                out.append(base)
        elif act.any():
            out.append(np.linalg.lstsq(A_act, b[act], rcond=None)[0])
    return out


def _coordinate_search(A, b, nu, alpha, iters=200):
    alpha = alpha.copy()
    f = alpha_objective(A, b, alpha, nu)
    step = max(1.0, float(np.abs(alpha).max(initial=0.0)))
    E = alpha.shape[0]
    for _ in range(iters):
        improved = False
        for j in range(E):
            for d in (step, -step):
                trial = alpha.copy()
                trial[j] += d
                ft = alpha_objective(A, b, trial, nu)
                if ft < f - 1e-15:
                    alpha, f, improved = trial, ft, True
        if not improved:
            step *= 0.5
            if step < 1e-10:
                break
    return alpha


def solve_alpha_moments(A, b, nu: float, *, exact_limit: int = 8) -> np.ndarray:
    """Minimize ``sum_e |b_e - (A alpha)_e| + nu ||alpha||^2``.

    Candidates: projected subgradient descent from zero, the stationary point
    of every linear piece (enumerated while ``|E| <= exact_limit``) and a
    final coordinate search from the best of those.  Among equal objective
    values the smallest-norm point wins.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    cands = [_subgradient(A, b, nu)]
    if b.shape[0] <= exact_limit:
        cands += _kkt_candidates(A, b, nu)

    def key(a):
        return (round(alpha_objective(A, b, a, nu), 12), float(a @ a))

    best = min(cands, key=key)
    polished = _coordinate_search(A, b, nu, best)
    return min([best, polished], key=key)


def solve_alpha(residuals: Sequence[np.ndarray], h_matrix, nu: float) -> np.ndarray:
    """Per-environment tree weights for one boosting round.

    ``residuals[e]`` are environment e's current residuals and
    ``h_matrix[e][t]`` is tree t evaluated on environment e's rows.
    """
    A, b = _moments(residuals, h_matrix)
    return solve_alpha_moments(A, b, nu)


# ---------------------------------------------------------------------------
# training


@dataclass
class _Env:
    env_id: str
    features: tuple[int, ...]
    X: np.ndarray
    Y: np.ndarray
    Xv: np.ndarray
    Yv: np.ndarray
    fitter: TreeFitter


def _prepare(envs: Sequence[EnvDataset], config: BoostConfig) -> list[_Env]:
    if not envs:
        raise ValidationError("need at least one environment")
    p = envs[0].p
    names = envs[0].covariate_names
    rng = np.random.default_rng(config.seed)
    out = []
    for d in envs:
        if d.p != p or d.covariate_names != names:
            raise ValidationError("environments must share the covariate schema")
        feats = tuple(sorted(d.spec.randomized))
        if not feats:
            raise NoRandomizedFeatures(f"environment {d.env_id!r} randomizes no covariate")
        if config.val_fraction > 0:
            tr, va = d.split(config.val_fraction, rng)
        else:
            tr, va = d, d
        out.append(_Env(d.env_id, feats, tr.X, tr.Y, va.X, va.Y, TreeFitter(tr.X[:, list(feats)], feats)))
    return out


def boost(envs: Sequence[EnvDataset], config: BoostConfig = BoostConfig()) -> AggregateModel:
    """Causal aggregation boosting.

    Every round: residuals per environment, one tree per environment on its
    randomized covariates, joint weights ``alpha`` from :func:`solve_alpha`,
    gap ``delta`` = largest |sum_t alpha_t h_t| over validation rows, then
    ``f += eta * sum_t alpha_t h_t``.  Stops once ``delta <= delta0``.
    """
    data = _prepare(envs, config)
    E = len(data)
    fit_pred = [np.zeros(d.Y.shape[0]) for d in data]
    terms: list[list] = [[] for _ in range(E)]
    gaps = []
    converged = False
    rounds = 0
    for rounds in range(1, config.max_rounds + 1):
        resid = [d.Y - f for d, f in zip(data, fit_pred)]
        trees = [d.fitter.fit(r, config.max_depth, config.min_leaf) for d, r in zip(data, resid)]
        H = [[trees[t].predict(data[e].X) for t in range(E)] for e in range(E)]
        alpha = solve_alpha(resid, H, config.nu)
        delta = 0.0
        for d in data:
            step = sum(a * t.predict(d.Xv) for a, t in zip(alpha, trees))
            delta = max(delta, float(np.max(np.abs(step))) if np.ndim(step) else abs(step))
        gaps.append(delta)
        for e in range(E):
            fit_pred[e] = fit_pred[e] + config.eta * sum(alpha[t] * H[e][t] for t in range(E))
        for t in range(E):
            if alpha[t] != 0.0:
                terms[t].append((float(config.eta * alpha[t]), trees[t]))
        if delta <= config.delta0:
            converged = True
            break
    comps = tuple(Component(d.env_id, d.features, tuple(ts)) for d, ts in zip(data, terms))
    return AggregateModel(comps, config, "boost", rounds, converged, tuple(gaps))


def _fit_component(d: _Env, target: np.ndarray, target_val: np.ndarray, config: BoostConfig) -> Component:
    """L2 gradient-boosted trees of ``target`` on the environment's randomized covariates.

    Rounds stop early when validation error has not improved for
    ``component_patience`` rounds; the best prefix is kept.
    """
    offset = float(target.mean())
    pred = np.full(target.shape[0], offset)
    Fv = d.Xv[:, list(d.features)]
    pred_v = np.full(Fv.shape[0], offset)
    terms = []
    best_err = float(np.mean((target_val - pred_v) ** 2))
    best_len = 0
    for k in range(config.component_rounds):
        tree = d.fitter.fit(target - pred, config.max_depth, config.min_leaf)
        pred = pred + config.eta * tree.predict_local(d.fitter.F)
        pred_v = pred_v + config.eta * tree.predict_local(Fv)
        terms.append((config.eta, tree))
        err = float(np.mean((target_val - pred_v) ** 2))
        if err < best_err - 1e-12:
            best_err, best_len = err, len(terms)
        elif len(terms) - best_len >= config.component_patience:
            break
    return Component(d.env_id, d.features, tuple(terms[:best_len]), offset)


def backfit(envs: Sequence[EnvDataset], config: BoostConfig = BoostConfig()) -> AggregateModel:
    """Randomized backfitting: refit one environment's component against the others, repeatedly.

    Known to be unstable: the refits minimize losses on different datasets,
    so the gap need not shrink.  At most ``backfit_rounds`` refits.
    """
    data = _prepare(envs, config)
    E = len(data)
    rng = np.random.default_rng([config.seed, 1])
    comps = [Component(d.env_id, d.features) for d in data]
    gaps = []
    converged = False
    rounds = 0
    for rounds in range(1, config.backfit_rounds + 1):
        e = int(rng.integers(E)) if rounds > E else rounds - 1
        d = data[e]
        others = [c for i, c in enumerate(comps) if i != e]
        target = d.Y - sum((c.predict(d.X) for c in others), np.zeros(d.Y.shape[0]))
        target_v = d.Yv - sum((c.predict(d.Xv) for c in others), np.zeros(d.Yv.shape[0]))
        new = _fit_component(d, target, target_v, config)
        delta = float(np.max(np.abs(new.predict(d.Xv) - comps[e].predict(d.Xv))))
        comps[e] = new
        gaps.append(delta)
        if delta <= config.delta0 and rounds >= E:
            converged = True
            break
    return AggregateModel(tuple(comps), config, "backfit", rounds, converged, tuple(gaps))


def single_pass_backfit(
    envs: Sequence[EnvDataset], order: Sequence[int] | None = None, config: BoostConfig = BoostConfig()
) -> AggregateModel:
    """Fit each component exactly once, in ``order`` (indices into ``envs``), on the running residual."""
    data = _prepare(envs, config)
    order = list(range(len(data))) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(len(data))):
        raise ValidationError("order must be a permutation of the environment indices")
    comps: list[Component | None] = [None] * len(data)
    for e in order:
        d = data[e]
        done = [c for c in comps if c is not None]
        target = d.Y - sum((c.predict(d.X) for c in done), np.zeros(d.Y.shape[0]))
        target_v = d.Yv - sum((c.predict(d.Xv) for c in done), np.zeros(d.Yv.shape[0]))
        comps[e] = _fit_component(d, target, target_v, config)
    return AggregateModel(tuple(comps), config, "single_pass", len(data), True, ())


def downstream_order(envs: Sequence[EnvDataset], topological_order: Sequence[int]) -> list[int]:
    """Environment indices sorted so that those with the most downstream randomized covariate come first."""
    rank = {v: i for i, v in enumerate(topological_order)}
    keys = [max(rank[j] for j in d.spec.randomized) for d in envs]
    return sorted(range(len(envs)), key=lambda i: (-keys[i], i))


def pooled_forest(envs: Sequence[EnvDataset], config: BoostConfig = BoostConfig()) -> AggregateModel:
    """Bagged deep trees on all covariates of the pooled rows (a confounded regression baseline)."""
    X = np.vstack([d.X for d in envs])
    Y = np.concatenate([d.Y for d in envs])
    p = X.shape[1]
    rng = np.random.default_rng([config.seed, 2])
    terms = []
    for _ in range(config.forest_trees):
        rows = rng.integers(0, X.shape[0], X.shape[0])
        tree = TreeFitter(X[rows], tuple(range(p))).fit(Y[rows], config.forest_depth, config.min_leaf)
        terms.append((1.0 / config.forest_trees, tree))
    return AggregateModel((Component("pooled", tuple(range(p)), tuple(terms)),), config, "pooled_forest", 1, True)


# ---------------------------------------------------------------------------
# evaluation


def oracle_l2_loss(model, truth: Callable[[np.ndarray], np.ndarray], test_envs: Sequence[EnvDataset]) -> float:
    """Mean of ``(truth(x) - model(x))^2`` over all rows of ``test_envs`` pooled."""
    X = np.vstack([d.X for d in test_envs])
    pred = model.predict(X) if hasattr(model, "predict") else model(X)
    return float(np.mean((np.asarray(truth(X)) - pred) ** 2))


def orthogonality_score(model: AggregateModel, envs: Sequence[EnvDataset], config: BoostConfig | None = None) -> float:
    """Unpenalized re-weighting objective at alpha = 0 on held-out environments.

    A fresh tree per environment is fit to that environment's residual; the
    score sums ``|mean(residual * tree)|`` over environments.  Lower means the
    residuals carry less signal along the randomized covariates.
    """
    config = config or model.config
    total = 0.0
    for d in envs:
        feats = sorted(d.spec.randomized)
        resid = d.Y - model.predict(d.X)
        if d.n < 2 * config.min_leaf:
            continue
        tree = TreeFitter(d.X[:, feats], feats).fit(resid, config.max_depth, config.min_leaf)
        total += abs(float(resid @ tree.predict(d.X)) / d.n)
    return total
