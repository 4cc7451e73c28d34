"""Structural equation models, interventions and sampling.

Node indexing is 0-based: covariates are ``0 .. p-1``, the response is ``p``
and instrument ``k`` of a model is node ``p + 1 + k``.  Latent factors live in
their own index space ``0 .. num_latent-1`` and never have observed parents.

Every equation has the additive form::

    node <- fn(X[fn_parents]) + sum_k coefs[k] * X[k] + sum_l latent[l] * H[l]
            + noise (+ shift)

so a purely linear equation simply has ``function=None``.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    BadIndex,
    CyclicGraph,
    OverlapError,
    ResponseIntervention,
    UnknownPreset,
    ValidationError,
)

__all__ = [
    "Noise",
    "Equation",
    "Instrument",
    "SemModel",
    "EnvironmentSpec",
    "EnvDataset",
    "FUNCTIONS",
    "build_sem",
    "intervene",
    "sample",
    "preset",
    "PRESETS",
    "model_to_dict",
    "model_from_dict",
    "env_to_dict",
    "env_from_dict",
]


# ---------------------------------------------------------------------------
# named structural functions (JSON documents refer to these by tag)


def _neg2_product(P):
    return -2.0 * P[:, 0] * P[:, 1]


def _log1p_abs(P):
    return np.log1p(np.abs(P[:, 0]))


def f0_piecewise(P):
    """Piecewise-constant response with interactions (target I)."""
    x1, x2, x3, x4 = P[:, 0], P[:, 1], P[:, 2], P[:, 3]
    return (
        (x1 > 0).astype(float)
        + (x2 > 0)
        - 2.0 * ((x2 > 0) & (x3 > -1))
        + 2.0 * ((x1 < 0) & (x4 < -1))
        + 3.0 * ((x1 < 0) & (x2 < 1) & (x3 < -1))
    )


def f0_mixed(P):
    """Linear part plus piecewise-constant interactions (target II)."""
    x1, x2, x3, x4 = P[:, 0], P[:, 1], P[:, 2], P[:, 3]
    return (
        2.0 * x1
        - 2.0 * x2
        - 2.0 * ((x2 > 0) & (x3 > -1))
        + 2.0 * ((x1 < 0) & (x4 < -1))
        + 3.0 * ((x1 < 0) & (x2 < 1) & (x3 < -1))
    )


FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "neg2_product": _neg2_product,
    "log1p_abs": _log1p_abs,
    "f0_I": f0_piecewise,
    "f0_II": f0_mixed,
}


# ---------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class Noise:
    """A scalar distribution: ``gaussian`` (mean, scale) or ``bernoulli`` (p).

    A bernoulli with ``centered=True`` draws ``B - p`` so it has mean zero.
    """

    dist: str = "gaussian"
    scale: float = 1.0
    mean: float = 0.0
    p: float = 0.5
    centered: bool = False

    def __post_init__(self):
        if self.dist not in ("gaussian", "bernoulli"):
            raise ValidationError(f"unknown noise distribution {self.dist!r}")
        if self.dist == "gaussian" and self.scale < 0:
            raise ValidationError("gaussian scale must be non-negative")
        if self.dist == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ValidationError("bernoulli p must lie in [0, 1]")

    @property
    def expectation(self) -> float:
        if self.dist == "gaussian":
            return self.mean
        return 0.0 if self.centered else self.p

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.dist == "gaussian":
            return self.mean + self.scale * rng.standard_normal(n)
        out = (rng.random(n) < self.p).astype(float)
        return out - self.p if self.centered else out

    def to_dict(self) -> dict:
        if self.dist == "gaussian":
            return {"dist": "gaussian", "mean": self.mean, "scale": self.scale}
        return {"dist": "bernoulli", "p": self.p, "centered": self.centered}

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "Noise":
        if d is None:
            return cls()
        d = dict(d)
        return cls(**d)


STANDARD = Noise()


def _int_keys(d: Mapping | None) -> dict[int, float]:
    return {int(k): float(v) for k, v in (d or {}).items()}


@dataclass(frozen=True)
class Equation:
    coefs: Mapping[int, float] = field(default_factory=dict)
    latent: Mapping[int, float] = field(default_factory=dict)
    noise: Noise = STANDARD
    function: str | None = None
    fn_parents: tuple[int, ...] = ()
    shift: Noise | None = None

    @property
    def parents(self) -> frozenset[int]:
        return frozenset(k for k, a in self.coefs.items() if a != 0) | frozenset(self.fn_parents)

    def evaluate(self, values: np.ndarray, H: np.ndarray) -> np.ndarray:
        out = np.zeros(values.shape[0])
        if self.function is not None:
            out += FUNCTIONS[self.function](values[:, list(self.fn_parents)])
        for k, a in self.coefs.items():
            out += a * values[:, k]
        for l, c in self.latent.items():
            out += c * H[:, l]
        return out

    def to_dict(self) -> dict:
        d = {
            "coefs": {str(k): v for k, v in sorted(self.coefs.items())},
            "latent": {str(k): v for k, v in sorted(self.latent.items())},
            "noise": self.noise.to_dict(),
        }
        if self.function is not None:
            d["function"] = self.function
            d["fn_parents"] = list(self.fn_parents)
        if self.shift is not None:
            d["shift"] = self.shift.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Equation":
        shift = d.get("shift")
        return cls(
            coefs=_int_keys(d.get("coefs")),
            latent=_int_keys(d.get("latent")),
            noise=Noise.from_dict(d.get("noise")),
            function=d.get("function"),
            fn_parents=tuple(int(k) for k in d.get("fn_parents", ())),
            shift=None if shift is None else Noise.from_dict(shift),
        )


@dataclass(frozen=True)
class Instrument:
    """An exogenous observed variable entering ``targets`` with given coefficients.

    For ingested data only the name matters and ``targets`` is empty.
    """

    name: str
    targets: Mapping[int, float] = field(default_factory=dict)
    noise: Noise = STANDARD

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "targets": {str(k): v for k, v in sorted(self.targets.items())},
            "noise": self.noise.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping | str) -> "Instrument":
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], _int_keys(d.get("targets")), Noise.from_dict(d.get("noise")))


@dataclass(frozen=True)
class EnvironmentSpec:
    """Metadata of one environment.

    ``randomized`` is the surgically randomized covariate set, ``shifts`` maps
    each additively shifted covariate to its shift distribution, and
    ``known_parents`` declares parental sets usable for regression adjustment.
    ``base_env`` names the observational environment that shifted covariates
    are compared against.
    """

    env_id: str
    randomized: frozenset[int] = frozenset()
    shifts: Mapping[int, Noise] = field(default_factory=dict)
    instruments: tuple[Instrument, ...] = ()
    known_parents: Mapping[int, frozenset[int]] = field(default_factory=dict)
    sample_share: float | None = None
    randomization_noise: Mapping[int, Noise] = field(default_factory=dict)
    overrides: Mapping[int, Equation] = field(default_factory=dict)
    base_env: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "randomized", frozenset(int(j) for j in self.randomized))
        object.__setattr__(
            self,
            "known_parents",
            {int(j): frozenset(int(k) for k in pa) for j, pa in self.known_parents.items()},
        )
        overlap = self.randomized & self.additive_shift
        if overlap:
            raise OverlapError(
                f"environment {self.env_id!r}: covariates {sorted(overlap)} are both randomized and shifted"
            )
        if self.sample_share is not None and not 0.0 < self.sample_share < 1.0 + 1e-12:
            raise ValidationError("sample_share must lie in (0, 1]")

    @property
    def additive_shift(self) -> frozenset[int]:
        return frozenset(int(j) for j in self.shifts)

    @property
    def instrument_names(self) -> tuple[str, ...]:
        return tuple(i.name for i in self.instruments)


def _topological_order(p: int, eqs: Sequence[Equation]) -> tuple[int, ...]:
    """Kahn's algorithm over observed nodes 0..p, lowest index first among ready nodes."""
    children = {v: [] for v in range(p + 1)}
    indeg = [0] * (p + 1)
    for v, eq in enumerate(eqs):
        for k in eq.parents:
            if k <= p:
                children[k].append(v)
                indeg[v] += 1
    ready = [v for v in range(p + 1) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != p + 1:
        stuck = sorted(set(range(p + 1)) - set(order))
        raise CyclicGraph(f"parental sets induce a cycle through nodes {stuck}")
    return tuple(order)


@dataclass(frozen=True)
class SemModel:
    """Structural causal model over ``p`` covariates, a response and latent factors."""

    p: int
    covariate_eqs: tuple[Equation, ...]
    response_eq: Equation
    latent: tuple[Noise, ...] = ()
    instruments: tuple[Instrument, ...] = ()
    covariate_names: tuple[str, ...] | None = None
    response_name: str = "Y"
    env: EnvironmentSpec | None = None
    topological_order: tuple[int, ...] = field(init=False, compare=False)

    def __post_init__(self):
        p = self.p
        object.__setattr__(self, "covariate_eqs", tuple(self.covariate_eqs))
        object.__setattr__(self, "latent", tuple(self.latent))
        object.__setattr__(self, "instruments", tuple(self.instruments))
        if self.covariate_names is None:
            object.__setattr__(self, "covariate_names", tuple(f"X{j + 1}" for j in range(p)))
        if len(self.covariate_eqs) != p or len(self.covariate_names) != p:
            raise BadIndex(f"expected {p} covariate equations and names")
        n_obs = p + 1 + len(self.instruments)
        eqs = self.covariate_eqs + (self.response_eq,)
        for v, eq in enumerate(eqs):
            for k in set(eq.coefs) | set(eq.fn_parents):
                if not 0 <= k < n_obs:
                    raise BadIndex(f"node {v}: parent index {k} out of range")
                if k == v:
                    raise CyclicGraph(f"node {v} lists itself as a parent")
            for l in eq.latent:
                if not 0 <= l < len(self.latent):
                    raise BadIndex(f"node {v}: latent index {l} out of range")
            if eq.function is not None and eq.function not in FUNCTIONS:
                raise ValidationError(f"unknown structural function {eq.function!r}")
            if abs(eq.noise.expectation) > 1e-12:
                raise ValidationError(f"node {v}: disturbance must have mean zero")
        if any(k >= p for k in self.response_eq.parents):
            raise BadIndex("the response may only depend on covariates")
        for inst in self.instruments:
            for j in inst.targets:
                if not 0 <= j < p:
                    raise BadIndex(f"instrument {inst.name!r} targets index {j}")
        object.__setattr__(self, "topological_order", _topological_order(p, eqs))

    @property
    def num_latent(self) -> int:
        return len(self.latent)

    @property
    def beta(self) -> np.ndarray:
        """Linear direct effects of the covariates on the response."""
        b = np.zeros(self.p)
        for k, a in self.response_eq.coefs.items():
            b[k] = a
        return b

    @property
    def columns(self) -> tuple[str, ...]:
        return self.covariate_names + (self.response_name,) + tuple(i.name for i in self.instruments)

    def response_function(self, X: np.ndarray) -> np.ndarray:
        """The structural response function (without latent and noise terms)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = X @ self.beta
        eq = self.response_eq
        if eq.function is not None:
            out = out + FUNCTIONS[eq.function](X[:, list(eq.fn_parents)])
        return out


@dataclass(frozen=True)
class EnvDataset:
    """Samples of one environment; columns ``0..p-1`` are covariates, ``p`` is the response."""

    env_id: str
    columns: tuple[str, ...]
    data: np.ndarray
    p: int
    spec: EnvironmentSpec

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(self.columns):
            raise ValidationError("data shape does not match the column list")
        if data.shape[0] < 1:
            raise ValidationError(f"environment {self.env_id!r} has no rows")
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"environment {self.env_id!r} contains missing or infinite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def X(self) -> np.ndarray:
        return self.data[:, : self.p]

    @property
    def Y(self) -> np.ndarray:
        return self.data[:, self.p]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.columns[: self.p]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            from .errors import MissingColumn

            raise MissingColumn(f"environment {self.env_id!r} has no column {name!r}") from None

    def take(self, rows, env_id: str | None = None) -> "EnvDataset":
        return replace(self, env_id=env_id or self.env_id, data=self.data[rows])

    def restrict(self, covariates: Sequence[int]) -> "EnvDataset":
        """Keep only ``covariates`` (in the given order); annotations are re-indexed."""
        covariates = [int(k) for k in covariates]
        pos = {k: i for i, k in enumerate(covariates)}
        cols = covariates + list(range(self.p, len(self.columns)))
        spec = self.spec
        spec = replace(
            spec,
            randomized=frozenset(pos[k] for k in spec.randomized if k in pos),
            shifts={pos[k]: d for k, d in spec.shifts.items() if k in pos},
            known_parents={
                pos[j]: frozenset(pos[k] for k in pa)
                for j, pa in spec.known_parents.items()
                if j in pos and pa <= pos.keys()
            },
            randomization_noise={},
            overrides={},
        )
        return EnvDataset(self.env_id, tuple(self.columns[c] for c in cols), self.data[:, cols], len(covariates), spec)

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["EnvDataset", "EnvDataset"]:
        """Random split into (train, holdout) with ``fraction`` of rows held out."""
        perm = rng.permutation(self.n)
        k = int(round(self.n * fraction))
        return self.take(np.sort(perm[k:])), self.take(np.sort(perm[:k]))

    def centered(self) -> "EnvDataset":
        return replace(self, data=self.data - self.data.mean(axis=0))


# ---------------------------------------------------------------------------
# operations


def build_sem(spec: Mapping) -> SemModel:
    """Build a validated model from a declarative description (see :func:`model_from_dict`)."""
    return model_from_dict(spec)


def intervene(model: SemModel, spec: EnvironmentSpec) -> SemModel:
    """Apply the environment's interventions to ``model``.

    Randomized covariates lose all incoming edges and latent loadings and
    become pure exogenous noise; shifted covariates get the shift added to
    their disturbance; instruments are appended as exogenous parents of their
    targets.  The response equation is left untouched.
    """
    p = model.p
    for j in spec.randomized | spec.additive_shift | set(spec.overrides):
        if j == p:
            raise ResponseIntervention("the response cannot be intervened on")
        if not 0 <= j < p:
            raise BadIndex(f"intervention index {j} out of range for p={p}")
    if spec.randomized & spec.additive_shift:
        raise OverlapError("a covariate cannot be both randomized and shifted")

    eqs = list(model.covariate_eqs)
    for j, eq in spec.overrides.items():
        if not eq.parents <= eqs[j].parents:
            raise ValidationError(f"override for covariate {j} adds new parents")
        eqs[j] = eq
    instruments = list(model.instruments)
    for inst in spec.instruments:
        if not inst.targets:
            continue
        idx = p + 1 + len(instruments)
        instruments.append(inst)
        for j, a in inst.targets.items():
            coefs = dict(eqs[j].coefs)
            coefs[idx] = coefs.get(idx, 0.0) + a
            eqs[j] = replace(eqs[j], coefs=coefs)
    for j in spec.randomized:
        eqs[j] = Equation(noise=spec.randomization_noise.get(j, STANDARD))
    for j, delta in spec.shifts.items():
        eqs[j] = replace(eqs[j], shift=delta)
    return replace(model, covariate_eqs=tuple(eqs), instruments=tuple(instruments), env=spec)


def sample(model: SemModel, n: int, seed) -> EnvDataset:
    """Draw ``n`` i.i.d. rows; a pure function of ``(model, n, seed)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    rng = np.random.default_rng(seed)
    p = model.p
    H = np.column_stack([d.draw(rng, n) for d in model.latent]) if model.latent else np.zeros((n, 0))
    values = np.zeros((n, p + 1 + len(model.instruments)))
    for k, inst in enumerate(model.instruments):
        values[:, p + 1 + k] = inst.noise.draw(rng, n)
    eqs = model.covariate_eqs + (model.response_eq,)
    eps = [eq.noise.draw(rng, n) for eq in eqs]
    shifts = [None if eq.shift is None else eq.shift.draw(rng, n) for eq in eqs]
    for v in model.topological_order:
        col = eqs[v].evaluate(values, H) + eps[v]
        if shifts[v] is not None:
            col = col + shifts[v]
        values[:, v] = col
    spec = model.env or EnvironmentSpec("observational")
    return EnvDataset(spec.env_id, model.columns, values, p, spec)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: SemModel) -> dict:
    return {
        "p": model.p,
        "covariate_names": list(model.covariate_names),
        "response_name": model.response_name,
        "latent": [d.to_dict() for d in model.latent],
        "covariates": [eq.to_dict() for eq in model.covariate_eqs],
        "response": model.response_eq.to_dict(),
        "instruments": [i.to_dict() for i in model.instruments],
    }


def model_from_dict(d: Mapping) -> SemModel:
    covs = [Equation.from_dict(e) for e in d.get("covariates", [])]
    p = int(d.get("p", len(covs)))
    names = d.get("covariate_names")
    return SemModel(
        p=p,
        covariate_eqs=tuple(covs),
        response_eq=Equation.from_dict(d.get("response", {})),
        latent=tuple(Noise.from_dict(x) for x in d.get("latent", [])),
        instruments=tuple(Instrument.from_dict(x) for x in d.get("instruments", [])),
        covariate_names=None if names is None else tuple(names),
        response_name=d.get("response_name", "Y"),
    )


def env_to_dict(spec: EnvironmentSpec) -> dict:
    return {
        "env_id": spec.env_id,
        "randomized": sorted(spec.randomized),
        "shifts": {str(j): d.to_dict() for j, d in sorted(spec.shifts.items())},
        "instruments": [i.to_dict() for i in spec.instruments],
        "known_parents": {str(j): sorted(pa) for j, pa in sorted(spec.known_parents.items())},
        "sample_share": spec.sample_share,
        "randomization_noise": {str(j): d.to_dict() for j, d in sorted(spec.randomization_noise.items())},
        "overrides": {str(j): eq.to_dict() for j, eq in sorted(spec.overrides.items())},
        "base_env": spec.base_env,
    }


def env_from_dict(d: Mapping) -> EnvironmentSpec:
    return EnvironmentSpec(
        env_id=d["env_id"],
        randomized=frozenset(int(j) for j in d.get("randomized", ())),
        shifts={int(j): Noise.from_dict(x) for j, x in (d.get("shifts") or {}).items()},
        instruments=tuple(Instrument.from_dict(x) for x in d.get("instruments", ())),
        known_parents={int(j): frozenset(pa) for j, pa in (d.get("known_parents") or {}).items()},
        sample_share=d.get("sample_share"),
        randomization_noise={int(j): Noise.from_dict(x) for j, x in (d.get("randomization_noise") or {}).items()},
        overrides={int(j): Equation.from_dict(x) for j, x in (d.get("overrides") or {}).items()},
        base_env=d.get("base_env"),
    )


def dumps_model(model: SemModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# presets


def _linear_model() -> SemModel:
    # H -> X1, X2, Y; X1 -> X2, X3, X4; X2 -> X3, X5; X3 -> X4; X4 -> X5, Y; Y -> X5
    eqs = (
        Equation(latent={0: 2.0}),
        Equation(coefs={0: 1.0}, latent={0: 1.0}),
        Equation(coefs={0: -1.0, 1: 2.0}),
        Equation(coefs={0: 1.0, 2: 1.0}),
        Equation(coefs={1: 2.0, 3: 1.0, 5: -1.0}),
    )
    response = Equation(coefs={1: 1.0, 3: 2.0}, latent={0: 1.0})
    return SemModel(5, eqs, response, latent=(STANDARD,))


def _linear_envs(design: str) -> list[EnvironmentSpec]:
    adj = {3: frozenset({0, 2})}
    every = design in ("B", "D")
    e1 = EnvironmentSpec("e1", instruments=(Instrument("I", {0: 1.0}),), known_parents=adj if every else {})
    e2 = EnvironmentSpec("e2", randomized=frozenset({2, 4}), known_parents=adj if every else {})
    e3 = EnvironmentSpec("e3", randomized=frozenset({1}), known_parents=adj)
    e4 = EnvironmentSpec("e4", randomized=frozenset(range(5)))
    return {"A": [e1, e2, e3], "B": [e1, e2, e3], "C": [e4], "D": [e1, e2, e3, e4]}[design]


def _nonlinear_model(target: str) -> SemModel:
    eqs = (
        Equation(latent={0: 2.0}),
        Equation(coefs={0: 1.0}, latent={0: 1.0}),
        Equation(function="neg2_product", fn_parents=(0, 1)),
        Equation(function="log1p_abs", fn_parents=(0,), coefs={2: 1.0}),
        Equation(coefs={1: 2.0, 3: 1.0, 5: -1.0}),
    )
    response = Equation(function=f"f0_{target}", fn_parents=(0, 1, 2, 3), latent={0: 2.0})
    return SemModel(5, eqs, response, latent=(STANDARD,))


BOOST_DESIGNS = {
    "A": [{0, 1, 2}, {0, 3}],
    "B": [{0, 1, 2}],
    "C": [{0}, {1, 2}],
    "D": [{0}, {1}, {2}],
}


def _boost_envs(design: str) -> list[EnvironmentSpec]:
    return [EnvironmentSpec(f"e{k + 1}", randomized=frozenset(s)) for k, s in enumerate(BOOST_DESIGNS[design])]


HIGHDIM_BLANKET = (0, 1, 98, 99, 198, 199)


def _highdim_model(seed) -> SemModel:
    """200 covariates, only X99 has a direct effect on Y.

    Wiring (1-based names): pairs X(2k-1) -> X(2k) for k = 1..99; X99 -> Y;
    Y -> X100; X1 -> X100 and X2 -> X100 (co-parents of the response's child);
    latent H -> {X199, X200, Y} with no edge between X199 and X200.  The
    Markov blanket of Y is therefore {X1, X2, X99, X100, X199, X200}.  Every
    edge coefficient (including the direct effect of X99) is drawn from
    N(1, variance 0.5) using ``seed``; latent loadings are 1.
    """
    p = 200
    rng = np.random.default_rng(seed)
    draw = lambda: float(rng.normal(1.0, np.sqrt(0.5)))  # noqa: E731
    coefs = [dict() for _ in range(p)]
    for k in range(99):
        coefs[2 * k + 1][2 * k] = draw()
    beta99 = draw()
    coefs[99][p] = draw()
    coefs[99][0] = draw()
    coefs[99][1] = draw()
    latent = [dict() for _ in range(p)]
    latent[198] = {0: 1.0}
    latent[199] = {0: 1.0}
    eqs = tuple(Equation(coefs=c, latent=l) for c, l in zip(coefs, latent))
    response = Equation(coefs={98: beta99}, latent={0: 1.0})
    return SemModel(p, eqs, response, latent=(STANDARD,))


def _fig4_model(slope: float) -> SemModel:
    # X1 randomized in the only environment; X2 has no effect on Y
    eqs = (
        Equation(latent={0: 1.0}),
        Equation(coefs={0: slope}, latent={0: 1.0}),
    )
    return SemModel(2, eqs, Equation(coefs={0: 1.0}, latent={0: 1.0}), latent=(STANDARD,))


PRESETS = (
    "linear_exp_A",
    "linear_exp_B",
    "linear_exp_C",
    "linear_exp_D",
    "nonlin_f0_I",
    "nonlin_f0_II",
    "boost_sim_A",
    "boost_sim_B",
    "boost_sim_C",
    "boost_sim_D",
    "highdim_200",
    "fig4_left",
    "fig4_right",
)


def preset(name: str, seed=0, target: str = "I") -> tuple[SemModel, list[EnvironmentSpec]]:
    """Model and environment set of a named experiment.

    ``linear_exp_*``: the five-covariate linear model with instrument,
    randomization and adjustment environments.  ``boost_sim_*``: the
    non-linear model under the four randomization designs (``target`` picks
    the response function, "I" or "II").  ``nonlin_f0_*``: design A with the
    given response function.  ``highdim_200``: the 200-covariate model whose
    coefficients are drawn from ``seed``, with an observational environment
    followed by one single-covariate randomization environment per covariate.
    ``fig4_left`` / ``fig4_right``: two-covariate models where minimal-l1
    solutions do / do not recover the causal vector (1, 0).
    """
    if name.startswith("linear_exp_") and name[-1] in "ABCD":
        return _linear_model(), _linear_envs(name[-1])
    if name in ("nonlin_f0_I", "nonlin_f0_II"):
        return _nonlinear_model(name.rsplit("_", 1)[1]), _boost_envs("A")
    if name.startswith("boost_sim_") and name[-1] in "ABCD":
        if target not in ("I", "II"):
            raise UnknownPreset(f"unknown response target {target!r}")
        return _nonlinear_model(target), _boost_envs(name[-1])
    if name == "highdim_200":
        envs = [EnvironmentSpec("obs")]
        envs += [EnvironmentSpec(f"r{j + 1}", randomized=frozenset({j})) for j in range(200)]
        return _highdim_model(seed), envs
    if name == "fig4_left":
        return _fig4_model(0.5), [EnvironmentSpec("e1", randomized=frozenset({0}))]
    if name == "fig4_right":
        return _fig4_model(2.0), [EnvironmentSpec("e1", randomized=frozenset({0}))]
    raise UnknownPreset(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")
