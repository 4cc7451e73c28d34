"""Study manifests, replication studies, semi-synthetic perturbation and reports.

Everything here is plumbing around the estimators: reading and writing CSV
environments, dispatching to an estimator, running seeded replications and
rendering JSON reports as text tables.  Reports never contain timestamps, so
identical inputs give byte-identical output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import boosting
from .constraints import (
    ADJUST_OTHER,
    ADJUST_SAME,
    Diagnosis,
    assemble,
    check_identifiability,
    constraints_from_annotations,
    randomization_constraint,
)
from .errors import (
    EmptyEnvironment,
    GroupCoverageError,
    MissingColumn,
    ParseError,
    SchemaMismatch,
    Underidentified,
    ValidationError,
)
from .linear import (
    GMM_IDENTITY,
    confidence_intervals,
    gmm_estimate,
    ols_estimate,
    solve_just_identified,
    two_step_gmm,
)
from .sem import (
    HIGHDIM_BLANKET,
    PRESETS,
    STANDARD,
    EnvDataset,
    EnvironmentSpec,
    Instrument,
    intervene,
    preset,
    sample,
)
from .sparse import dantzig_aggregate, prescreen_then_aggregate, select_lambda, theory_lambda_grid

__all__ = [
    "SCHEMA_VERSION",
    "MODES",
    "EnvEntry",
    "StudyManifest",
    "ingest",
    "emit_manifest",
    "estimate_datasets",
    "estimate_command",
    "simulate_command",
    "perturb_command",
    "render_report",
    "report_rows",
    "dumps_report",
    "default_n_grid",
    "boost_study_losses",
]

SCHEMA_VERSION = 1
MODES = ("just", "gmm", "sparse", "boost")
DEFAULT_OPTIONS = {
    "alpha": 0.05,
    "seed": 0,
    "mode": "just",
    "center": False,
    "adjustment_fit": ADJUST_SAME,
    "lambda": "auto",
    "boost": {},
}
BOOST_TEST_ROWS = 10_000
_SAFE_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


# ---------------------------------------------------------------------------
# JSON helpers


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_report(report: Mapping) -> str:
    return json.dumps(_plain(report), sort_keys=True, indent=2) + "\n"


def _sha256(payload: Any) -> str:
    text = payload if isinstance(payload, (bytes, str)) else json.dumps(_plain(payload), sort_keys=True)
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class EnvEntry:
    env_id: str
    csv: str
    randomized: tuple[str, ...] = ()
    shifted: tuple[str, ...] = ()
    base_env: str | None = None
    instruments: tuple[str, ...] = ()
    known_parents: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvEntry":
        try:
            return cls(
                env_id=str(d["env_id"]),
                csv=str(d["csv"]),
                randomized=tuple(d.get("randomized", ())),
                shifted=tuple(d.get("shifted", ())),
                base_env=d.get("base_env"),
                instruments=tuple(d.get("instruments", ())),
                known_parents={str(k): tuple(v) for k, v in dict(d.get("known_parents", {})).items()},
            )
        except KeyError as exc:
            raise ValidationError(f"environment entry is missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "csv": self.csv,
            "randomized": list(self.randomized),
            "shifted": list(self.shifted),
            "base_env": self.base_env,
            "instruments": list(self.instruments),
            "known_parents": {k: list(v) for k, v in sorted(self.known_parents.items())},
        }


@dataclass(frozen=True)
class StudyManifest:
    """Environments sharing one response and one ordered covariate list.

    CSV paths are resolved relative to ``base_dir`` (the manifest's folder
    when loaded from disk).
    """

    response: str
    covariates: tuple[str, ...]
    environments: tuple[EnvEntry, ...]
    options: Mapping[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "environments", tuple(self.environments))
        object.__setattr__(self, "options", {**DEFAULT_OPTIONS, **dict(self.options)})
        object.__setattr__(self, "base_dir", Path(self.base_dir))
        if not self.covariates:
            raise ValidationError("manifest lists no covariates")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValidationError("covariate names must be unique")
        if self.response in self.covariates:
            raise ValidationError(f"response {self.response!r} is also listed as a covariate")
        if not self.environments:
            raise ValidationError("manifest lists no environments")
        ids = [e.env_id for e in self.environments]
        if len(set(ids)) != len(ids):
            raise ValidationError("environment ids must be unique")
        known = set(self.covariates)
        for e in self.environments:
            names = list(e.randomized) + list(e.shifted) + list(e.known_parents)
            names += [k for pa in e.known_parents.values() for k in pa]
            bad = sorted(set(names) - known)
            if bad:
                raise MissingColumn(f"environment {e.env_id!r} refers to unknown covariates {bad}")
            clash = set(e.instruments) & (known | {self.response})
            if clash:
                raise ValidationError(f"environment {e.env_id!r}: instruments {sorted(clash)} are not exogenous columns")
            if e.shifted and e.base_env not in ids:
                raise ValidationError(f"environment {e.env_id!r} shifts covariates but its base environment is unknown")
        if self.options["mode"] not in MODES:
            raise ValidationError(f"unknown mode {self.options['mode']!r}; choose one of {', '.join(MODES)}")
        if self.options["adjustment_fit"] not in (ADJUST_SAME, ADJUST_OTHER):
            raise ValidationError(f"unknown adjustment_fit {self.options['adjustment_fit']!r}")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | str = ".") -> "StudyManifest":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported manifest schema_version {version!r}")
        try:
            return cls(
                response=str(d["response"]),
                covariates=tuple(d["covariates"]),
                environments=tuple(EnvEntry.from_dict(e) for e in d["environments"]),
                options=dict(d.get("options", {})),
                base_dir=Path(base_dir),
            )
        except KeyError as exc:
            raise ValidationError(f"manifest is missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> "StudyManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "response": self.response,
            "covariates": list(self.covariates),
            "environments": [e.to_dict() for e in self.environments],
            "options": dict(sorted(self.options.items())),
        }

    def csv_path(self, entry: EnvEntry) -> Path:
        return self.base_dir / entry.csv

    def content_hash(self) -> str:
        """Digest of the manifest content and every referenced CSV file."""
        h = hashlib.sha256(json.dumps(_plain(self.to_dict()), sort_keys=True).encode())
        for e in self.environments:
            path = self.csv_path(e)
            if path.exists():
                h.update(hashlib.sha256(path.read_bytes()).hexdigest().encode())
        return h.hexdigest()


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise EmptyEnvironment(f"{path}: no header row")
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            values = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: column {name!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}:{lineno}: column {name!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def ingest(manifest: StudyManifest, *, center: bool | None = None) -> list[EnvDataset]:
    """Read and validate every environment of ``manifest``.

    Each dataset's columns are the covariates in manifest order, the
    response, then that environment's instruments.
    """
    center = manifest.options["center"] if center is None else center
    pos = {name: j for j, name in enumerate(manifest.covariates)}
    out = []
    for e in manifest.environments:
        path = manifest.csv_path(e)
        header, values = _read_csv(path)
        if len(set(header)) != len(header):
            raise SchemaMismatch(f"{path}: duplicate column names")
        missing = [c for c in (*manifest.covariates, manifest.response) if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        order = [h for h in header if h in pos]
        if order != list(manifest.covariates):
            raise SchemaMismatch(f"{path}: covariate order {order} differs from manifest order {list(manifest.covariates)}")
        absent = [i for i in e.instruments if i not in header]
        if absent:
            raise MissingColumn(f"{path}: instrument columns {absent} not found")
        if values.shape[0] < 2:
            raise EmptyEnvironment(f"{path}: environment {e.env_id!r} needs at least 2 rows, found {values.shape[0]}")
        names = [*manifest.covariates, manifest.response, *e.instruments]
        data = values[:, [header.index(c) for c in names]]
        spec = EnvironmentSpec(
            e.env_id,
            randomized=frozenset(pos[c] for c in e.randomized),
            shifts={pos[c]: STANDARD for c in e.shifted},
            instruments=tuple(Instrument(i) for i in e.instruments),
            known_parents={pos[c]: frozenset(pos[k] for k in pa) for c, pa in e.known_parents.items()},
            base_env=e.base_env,
        )
        d = EnvDataset(e.env_id, tuple(names), data, len(manifest.covariates), spec)
        out.append(d.centered() if center else d)
    return out


def _write_csv(path: Path, header: Sequence[str], data: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.asarray(data, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def emit_manifest(
    datasets: Sequence[EnvDataset], out_dir: str | Path, options: Mapping | None = None
) -> StudyManifest:
    """Write one CSV per dataset plus ``manifest.json``; values round-trip exactly."""
    if not datasets:
        raise ValidationError("nothing to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = datasets[0]
    covariates = first.covariate_names
    response = first.columns[first.p]
    entries = []
    for k, d in enumerate(datasets):
        if d.covariate_names != covariates or d.columns[d.p] != response:
            raise SchemaMismatch(f"dataset {d.env_id!r} does not share the first dataset's schema")
        name = f"{d.env_id}.csv" if _SAFE_ID.match(d.env_id) else f"env{k + 1}.csv"
        _write_csv(out_dir / name, d.columns, d.data)
        s = d.spec
        cov = lambda idx: tuple(covariates[j] for j in sorted(idx))  # noqa: E731
        entries.append(
            EnvEntry(
                env_id=d.env_id,
                csv=name,
                randomized=cov(s.randomized),
                shifted=cov(s.additive_shift),
                base_env=s.base_env,
                instruments=s.instrument_names,
                known_parents={covariates[j]: cov(pa) for j, pa in s.known_parents.items()},
            )
        )
    manifest = StudyManifest(response, covariates, tuple(entries), dict(options or {}), out_dir)
    (out_dir / "manifest.json").write_text(dumps_report(manifest.to_dict()), encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# estimation


def _empty_diagnosis(p: int) -> Diagnosis:
    return Diagnosis(0, p, 0, (), float("inf"), False, None, tuple(range(p)), False)


def _interval_rows(beta, cis) -> list[list[float | None]]:
    return [[lo, hi] for lo, hi in cis] if cis is not None else [[None, None] for _ in beta]


def estimate_datasets(
    datasets: Sequence[EnvDataset],
    mode: str = "just",
    *,
    alpha: float = 0.05,
    lam: float | str = "auto",
    adjustment_fit: str = ADJUST_SAME,
    boost_config: Mapping | boosting.BoostConfig | None = None,
    seed: int = 0,
) -> dict:
    """Run one estimator on ``datasets`` and return the report body.

    The identifiability diagnosis of the implied constraint system is always
    attached; ``just`` and ``gmm`` refuse to solve an under-identified system.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose one of {', '.join(MODES)}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    first = datasets[0]
    names = list(first.covariate_names)
    p = first.p
    constraints, warnings = constraints_from_annotations(datasets, adjustment_fit)
    system = assemble(constraints, datasets=datasets) if constraints else None
    diag = check_identifiability(system) if system is not None else _empty_diagnosis(p)
    body: dict[str, Any] = {
        "mode": mode,
        "covariates": names,
        "alpha": alpha,
        "diagnostics": {
            "identifiability": diag.to_dict(),
            "constraints": [c.label for c in constraints],
            "warnings": warnings,
            "env_sizes": {d.env_id: d.n for d in datasets},
        },
    }
    if mode in ("just", "gmm"):
        if not diag.identifiable:
            raise Underidentified(
                f"{diag.n_constraints} constraints of rank {diag.rank} cannot identify {p} coefficients",
                diag.to_dict(),
            )
        if mode == "just":
            est = solve_just_identified(system)
        elif system.has_inner_product:
            est = gmm_estimate(system, np.eye(system.m), method=GMM_IDENTITY)
        else:
            est = two_step_gmm(system)
        d = est.to_dict(alpha, names)
        body.update(estimator=est.method, beta=d["beta"], ci=d["ci"])
        body["diagnostics"].update(sigma2=d["sigma2"], condition_number=d["condition_number"])
    elif mode == "sparse":
        if system is None:
            raise Underidentified("no constraints are implied by the manifest", diag.to_dict())
        chosen = lam
        if lam == "auto":
            chosen = _auto_lambda(datasets, adjustment_fit, seed)
        beta = dantzig_aggregate(system, float(chosen))
        body.update(
            estimator="L1_AGGREGATION",
            beta=beta,
            ci=_interval_rows(beta, None),
            **{"lambda": float(chosen)},
            support=[names[j] for j in np.flatnonzero(np.abs(beta) > 1e-8)],
        )
        body["diagnostics"]["condition_number"] = diag.condition_number
    else:
        cfg = boost_config if isinstance(boost_config, boosting.BoostConfig) else boosting.BoostConfig.from_dict(
            dict(boost_config or {})
        )
        model = boosting.boost(datasets, cfg)
        body.update(estimator="CAUSAL_BOOSTING", model_summary=_model_summary(model, names, datasets, cfg))
        body["_model"] = model
    return body


def _auto_lambda(datasets: Sequence[EnvDataset], adjustment_fit: str, seed: int) -> float:
    """Choose lambda on a random half of every environment, validated on the other half."""
    rng = np.random.default_rng(seed)
    halves = [d.split(0.5, rng) for d in datasets]
    train = [t for t, _ in halves]
    held = [h for _, h in halves]
    if min(d.n for d in held) < 2:
        raise ValidationError("automatic lambda selection needs at least 4 rows per environment")
    ct, _ = constraints_from_annotations(train, adjustment_fit)
    cv, _ = constraints_from_annotations(held, adjustment_fit)
    st, sv = assemble(ct, datasets=train), assemble(cv, datasets=held)
    grid = theory_lambda_grid(st.p, min(d.n for d in train))
    lam, _ = select_lambda(st, sv, grid)
    return lam


def _model_summary(model: boosting.AggregateModel, names, datasets, cfg) -> dict:
    return {
        "method": model.method,
        "rounds": model.rounds,
        "converged": model.converged,
        "final_gap": model.gaps[-1] if model.gaps else None,
        "components": [
            {"env_id": c.env_id, "features": [names[j] for j in c.features], "trees": len(c.terms)}
            for c in model.components
        ],
        "orthogonality_score": boosting.orthogonality_score(model, datasets, cfg),
        "config": cfg.to_dict(),
    }


def _finish(report: dict, config: Mapping, extra: Mapping | None = None) -> dict:
    report["schema_version"] = SCHEMA_VERSION
    report["provenance"] = {"seed": config.get("seed"), "config_hash": _sha256(config), **(extra or {})}
    return report


def estimate_command(
    manifest: StudyManifest | str | Path,
    mode: str | None = None,
    *,
    alpha: float | None = None,
    lam: float | str | None = None,
    seed: int | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    """Ingest a manifest, estimate, and (optionally) write ``report.json`` to ``out_dir``.

    Arguments left as ``None`` fall back to the manifest's options.
    """
    if not isinstance(manifest, StudyManifest):
        manifest = StudyManifest.load(manifest)
    o = manifest.options
    config = {
        "command": "estimate",
        "mode": mode or o["mode"],
        "alpha": float(alpha if alpha is not None else o["alpha"]),
        "lambda": lam if lam is not None else o["lambda"],
        "seed": int(seed if seed is not None else o["seed"]),
        "center": bool(o["center"]),
        "adjustment_fit": o["adjustment_fit"],
        "boost": dict(o.get("boost") or {}),
    }
    lam_value = config["lambda"]
    if lam_value != "auto":
        try:
            lam_value = float(lam_value)
        except (TypeError, ValueError):
            raise ValidationError(f"lambda must be a number or 'auto', got {lam_value!r}") from None
        if lam_value < 0:
            raise ValidationError("lambda must be non-negative")
    datasets = ingest(manifest)
    body = estimate_datasets(
        datasets,
        config["mode"],
        alpha=config["alpha"],
        lam=lam_value,
        adjustment_fit=config["adjustment_fit"],
        boost_config=config["boost"],
        seed=config["seed"],
    )
    model = body.pop("_model", None)
    report = _finish({"command": "estimate", **body}, config, {"manifest_hash": manifest.content_hash()})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
        if model is not None:
            payload = {"covariates": body["covariates"], "model": model.to_dict()}
            (out / "model.json").write_text(dumps_report(payload), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# replication studies


def default_n_grid(n: int) -> list[int]:
    """Sample sizes for boosting loss curves: a tenth, a third and all of ``n``."""
    return sorted({max(100, n // 10), max(100, n // 3), n})


def _family(name: str) -> str:
    if name not in PRESETS:
        from .errors import UnknownPreset

        raise UnknownPreset(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")
    if name.startswith("linear_exp_"):
        return "linear"
    if name.startswith(("boost_sim_", "nonlin_")):
        return "boost"
    if name == "highdim_200":
        return "highdim"
    return "fig4"


def _covered(ci, truth) -> list[bool]:
    return [lo is not None and lo <= t <= hi for (lo, hi), t in zip(ci, truth)]


def _rep_linear(cfg: Mapping, rep_seed: int) -> dict:
    model, envs = preset(cfg["preset"])
    ds = [sample(intervene(model, e), cfg["n"], [rep_seed, k]) for k, e in enumerate(envs)]
    cons, _ = constraints_from_annotations(ds, cfg["adjustment_fit"])
    system = assemble(cons, datasets=ds)
    est = solve_just_identified(system) if system.m == system.p else two_step_gmm(system)
    out = {}
    for tag, e in (("aggregate", est), ("pooled_ols", ols_estimate(ds))):
        ci = confidence_intervals(e, cfg["alpha"])
        out[tag] = {"beta": e.beta.tolist(), "ci": [list(c) for c in ci]}
    return out


def _rep_highdim(cfg: Mapping, rep_seed: int) -> dict:
    n = cfg["n"]
    model, _ = preset("highdim_200", seed=rep_seed)
    obs = sample(model, n, [rep_seed, 0])

    def builder(groups):
        return [
            sample(intervene(model, EnvironmentSpec(f"g{i + 1}", randomized=frozenset(g))), n, [rep_seed, i + 1])
            for i, g in enumerate(groups)
        ]

    res = prescreen_then_aggregate(obs, builder, seed=rep_seed)
    sel = list(res.selected)
    ci = confidence_intervals(res.estimate, cfg["alpha"])
    ols = ols_estimate(builder(res.groups), sel)
    return {
        "selected": sel,
        "truth": model.beta[sel].tolist(),
        "aggregate": {"beta": res.estimate.beta.tolist(), "ci": [list(c) for c in ci]},
        "pooled_ols": {"beta": ols.beta.tolist(), "ci": [list(c) for c in confidence_intervals(ols, cfg["alpha"])]},
    }


def _rep_fig4(cfg: Mapping, rep_seed: int) -> dict:
    model, envs = preset(cfg["preset"])
    d = sample(intervene(model, envs[0]), cfg["n"], [rep_seed, 0])
    system = assemble([randomization_constraint(d, 0)], datasets=[d])
    beta = dantzig_aggregate(system, 0.0)
    return {"aggregate": {"beta": beta.tolist()}}


BOOST_METHODS = ("boost", "pooled_forest", "single_pass")


def boost_study_losses(
    name: str,
    n_grid: Sequence[int],
    seed: int,
    *,
    target: str = "I",
    methods: Sequence[str] = BOOST_METHODS,
    config: Mapping | boosting.BoostConfig | None = None,
) -> dict[str, list[float]]:
    """Oracle L2 losses of each method trained on the first ``n`` rows of every environment.

    Losses are measured on ``BOOST_TEST_ROWS`` rows drawn with every
    covariate randomized, so all designs share one test distribution.
    """
    unknown = set(methods) - set(BOOST_METHODS)
    if unknown:
        raise ValidationError(f"unknown boosting methods {sorted(unknown)}")
    if name.startswith("nonlin_"):
        target = name.rsplit("_", 1)[1]
    model, envs = preset(name, target=target)
    base = config.to_dict() if isinstance(config, boosting.BoostConfig) else dict(config or {})
    bcfg = boosting.BoostConfig.from_dict({**base, "seed": seed})
    grid = [int(k) for k in n_grid]
    full = [sample(intervene(model, e), max(grid), [seed, k]) for k, e in enumerate(envs)]
    every = EnvironmentSpec("test", randomized=frozenset(range(model.p)))
    test = [sample(intervene(model, every), BOOST_TEST_ROWS, [seed, 10_000])]
    truth = model.response_function
    order = boosting.downstream_order(full, model.topological_order)
    fitters = {
        "boost": lambda tr: boosting.boost(tr, bcfg),
        "pooled_forest": lambda tr: boosting.pooled_forest(tr, bcfg),
        "single_pass": lambda tr: boosting.single_pass_backfit(tr, order, bcfg),
    }
    losses: dict[str, list[float]] = {m: [] for m in methods}
    for n in grid:
        train = [d.take(np.arange(n)) for d in full]
        for m in methods:
            losses[m].append(boosting.oracle_l2_loss(fitters[m](train), truth, test))
    return losses


def _rep_boost(cfg: Mapping, rep_seed: int) -> dict:
    losses = boost_study_losses(cfg["preset"], cfg["n_grid"], rep_seed, target=cfg["target"], config=cfg["boost"])
    return {"losses": losses}


_REPLICATORS = {"linear": _rep_linear, "highdim": _rep_highdim, "fig4": _rep_fig4, "boost": _rep_boost}


def _replicate(job: tuple[str, Mapping, int]) -> dict:
    family, cfg, rep = job
    return {"rep": rep, **_REPLICATORS[family](cfg, int(cfg["seed"]) + rep)}


def _summary_intervals(results, truth_of, tag) -> dict:
    cov, lengths, per_coord = [], [], []
    for r in results:
        truth = truth_of(r)
        ci = r[tag]["ci"]
        hit = _covered(ci, truth)
        cov.extend(hit)
        per_coord.append(hit)
        lengths.extend(hi - lo for lo, hi in ci)
    summary = {"coverage": float(np.mean(cov)), "mean_ci_length": float(np.mean(lengths))}
    if len({len(h) for h in per_coord}) == 1:
        summary["coverage_by_coordinate"] = np.mean(np.array(per_coord, dtype=float), axis=0).tolist()
    return summary


def _summarize(family: str, cfg: Mapping, results: list[dict]) -> dict:
    if family == "linear":
        model, _ = preset(cfg["preset"])
        truth = model.beta.tolist()
        return {tag: _summary_intervals(results, lambda r: truth, tag) for tag in ("aggregate", "pooled_ols")}
    if family == "highdim":
        blanket = set(HIGHDIM_BLANKET)
        return {
            "blanket_selected": float(np.mean([len(blanket & set(r["selected"])) for r in results])),
            "n_selected": float(np.mean([len(r["selected"]) for r in results])),
            "aggregate": _summary_intervals(results, lambda r: r["truth"], "aggregate"),
            "pooled_ols": _summary_intervals(results, lambda r: r["truth"], "pooled_ols"),
        }
    if family == "fig4":
        B = np.array([r["aggregate"]["beta"] for r in results])
        return {"aggregate": {"mean_beta": B.mean(axis=0).tolist(), "median_beta": np.median(B, axis=0).tolist()}}
    curves = {}
    for method in BOOST_METHODS:
        L = np.array([r["losses"][method] for r in results])
        curves[method] = {"median_loss": np.median(L, axis=0).tolist(), "mean_loss": L.mean(axis=0).tolist()}
    return {"n_grid": list(cfg["n_grid"]), "loss_curves": curves}


def _rep_rows(family: str, cfg: Mapping, results: list[dict]) -> tuple[list[str], list[list]]:
    if family == "boost":
        header = ["rep", "method", "n", "loss"]
        rows = [
            [r["rep"], m, n, loss]
            for r in results
            for m in sorted(r["losses"])
            for n, loss in zip(cfg["n_grid"], r["losses"][m])
        ]
        return header, rows
    if family == "fig4":
        return ["rep", "coordinate", "beta"], [
            [r["rep"], j + 1, b] for r in results for j, b in enumerate(r["aggregate"]["beta"])
        ]
    header = ["rep", "method", "coordinate", "beta", "ci_low", "ci_high", "truth", "covered"]
    rows = []
    for r in results:
        if family == "linear":
            coords = list(range(len(r["aggregate"]["beta"])))
            truth = preset(cfg["preset"])[0].beta.tolist()
        else:
            coords, truth = r["selected"], r["truth"]
        for tag in ("aggregate", "pooled_ols"):
            for (j, t), b, (lo, hi) in zip(zip(coords, truth), r[tag]["beta"], r[tag]["ci"]):
                rows.append([r["rep"], tag, j + 1, b, lo, hi, t, int(lo <= t <= hi)])
    return header, rows


def _rows_to_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def simulate_command(
    preset_name: str,
    n: int = 1000,
    reps: int = 100,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    jobs: int | None = None,
    out_dir: str | Path | None = None,
    target: str = "I",
    n_grid: Sequence[int] | None = None,
    adjustment_fit: str = ADJUST_SAME,
    boost_config: Mapping | None = None,
) -> dict:
    """Run ``reps`` seeded replications of a preset and summarize them.

    Replication ``r`` uses seed ``seed + r``; results do not depend on
    ``jobs``.  With ``out_dir`` the report, per-replication rows, the loss
    curve (boosting presets) and the data of replication 0 with its manifest
    (linear presets) are written there.
    """
    family = _family(preset_name)
    if n < 2 or reps < 1:
        raise ValidationError("need n >= 2 and reps >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    if target not in ("I", "II"):
        raise ValidationError(f"unknown response target {target!r}")
    cfg: dict[str, Any] = {
        "command": "simulate",
        "preset": preset_name,
        "n": int(n),
        "reps": int(reps),
        "seed": int(seed),
        "alpha": float(alpha),
        "adjustment_fit": adjustment_fit,
    }
    if family == "boost":
        grid = sorted({int(k) for k in (n_grid or default_n_grid(n))})
        if grid[0] < 2:
            raise ValidationError("every n-grid entry must be at least 2")
        cfg.update(target=target, n_grid=grid, boost=boosting.BoostConfig.from_dict(dict(boost_config or {})).to_dict())
    jobs = max(1, int(jobs if jobs is not None else (os.cpu_count() or 1)))
    work = [(family, cfg, rep) for rep in range(reps)]
    if jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, reps)) as pool:
            results = list(pool.map(_replicate, work))
    else:
        results = [_replicate(w) for w in work]
    results.sort(key=lambda r: r["rep"])
    report = _finish(
        {"command": "simulate", "preset": preset_name, "family": family, "summary": _summarize(family, cfg, results)},
        cfg,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
        header, rows = _rep_rows(family, cfg, results)
        _rows_to_csv(out / "replications.csv", header, rows)
        if family == "boost":
            curve = report["summary"]["loss_curves"]
            rows = [
                [n_, m, curve[m]["median_loss"][i], curve[m]["mean_loss"][i]]
                for m in sorted(curve)
                for i, n_ in enumerate(cfg["n_grid"])
            ]
            _rows_to_csv(out / "loss_curve.csv", ["n", "method", "median_loss", "mean_loss"], rows)
        if family == "linear":
            model, envs = preset(preset_name)
            ds = [sample(intervene(model, e), n, [seed, k]) for k, e in enumerate(envs)]
            emit_manifest(ds, out / "data", {"alpha": alpha, "seed": seed, "mode": "gmm", "adjustment_fit": adjustment_fit})
    return report


# ---------------------------------------------------------------------------
# semi-synthetic confounding


def perturb_command(
    input_csv: str | Path,
    groups: Sequence[Sequence[str]],
    out_dir: str | Path,
    *,
    m: float = 4.0,
    seed: int = 0,
    response: str | None = None,
    force_h: int | None = None,
) -> StudyManifest:
    """Split rows into one environment per group and inject a shared binary confounder.

    In environment ``e`` each row draws ``H ~ Bernoulli(0.5)``, the columns of
    group ``e`` get ``+ H`` and the response gets ``- m * (H - 1)``.  The
    emitted manifest marks every covariate outside the group as randomized
    (unconfounded) and requests centering.  ``force_h`` pins ``H`` for
    testing.
    """
    header, values = _read_csv(Path(input_csv))
    response = response or header[-1]
    if response not in header:
        raise MissingColumn(f"response column {response!r} not found")
    covariates = [h for h in header if h != response]
    groups = [list(dict.fromkeys(g)) for g in groups]
    if not groups:
        raise ValidationError("at least one group is required")
    for g in groups:
        bad = [c for c in g if c not in covariates]
        if bad:
            raise MissingColumn(f"group refers to unknown covariate columns {bad}")
    everywhere = set(covariates).intersection(*map(set, groups))
    if everywhere:
        raise GroupCoverageError(f"columns {sorted(everywhere)} appear in every group and would never be unconfounded")
    if force_h not in (None, 0, 1):
        raise ValidationError("force_h must be 0 or 1")
    if values.shape[0] < 2 * len(groups):
        raise EmptyEnvironment("too few rows to give every environment at least 2")
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(values.shape[0]), len(groups))
    y_col = header.index(response)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (rows, g) in enumerate(zip(parts, groups)):
        rows = np.sort(rows)
        block = values[rows].copy()
        if force_h is None:
            H = rng.binomial(1, 0.5, size=rows.size).astype(float)
        else:
            H = np.full(rows.size, float(force_h))
        for c in g:
            block[:, header.index(c)] += H
        block[:, y_col] -= m * (H - 1.0)
        env_id = f"env{k + 1}"
        _write_csv(out / f"{env_id}.csv", header, block)
        entries.append(EnvEntry(env_id, f"{env_id}.csv", randomized=tuple(c for c in covariates if c not in g)))
    manifest = StudyManifest(response, tuple(covariates), tuple(entries), {"center": True, "mode": "gmm", "seed": seed}, out)
    (out / "manifest.json").write_text(dumps_report(manifest.to_dict()), encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# rendering


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def report_rows(report: Mapping) -> tuple[list[str], list[list]]:
    """Tabular view of a report: one row per coefficient, method or loss point."""
    if report.get("command") == "estimate":
        if "beta" in report:
            header = ["covariate", "beta", "ci_low", "ci_high"]
            rows = [[c, b, lo, hi] for c, b, (lo, hi) in zip(report["covariates"], report["beta"], report["ci"])]
            return header, rows
        s = report["model_summary"]
        header = ["component", "features", "trees"]
        return header, [[c["env_id"], " ".join(c["features"]), c["trees"]] for c in s["components"]]
    s = report["summary"]
    family = report.get("family")
    if family in ("linear", "highdim"):
        header = ["method", "coverage", "mean_ci_length"]
        return header, [[m, s[m]["coverage"], s[m]["mean_ci_length"]] for m in ("aggregate", "pooled_ols")]
    if family == "fig4":
        return ["coordinate", "mean_beta", "median_beta"], [
            [j + 1, a, b] for j, (a, b) in enumerate(zip(s["aggregate"]["mean_beta"], s["aggregate"]["median_beta"]))
        ]
    header = ["n", "method", "median_loss", "mean_loss"]
    rows = [
        [n, m, c["median_loss"][i], c["mean_loss"][i]]
        for m, c in sorted(s["loss_curves"].items())
        for i, n in enumerate(s["n_grid"])
    ]
    return header, rows


def render_report(report: Mapping) -> str:
    header, rows = report_rows(report)
    cells = [header] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    title = report.get("estimator") or report.get("preset") or ""
    extra = []
    if report.get("command") == "estimate":
        diag = report["diagnostics"]["identifiability"]
        extra.append(f"identifiability: {diag['status']} (rank {diag['rank']} of {diag['p']})")
    if report.get("family") == "highdim":
        s = report["summary"]
        extra.append(f"markov blanket covariates selected: {s['blanket_selected']:.2f} (of {s['n_selected']:.2f} selected)")
    return "\n".join([str(title), *lines, *extra]) + "\n"


def report_csv(report: Mapping) -> str:
    header, rows = report_rows(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([["" if v is None else v for v in row] for row in rows])
    return buf.getvalue()
