"""Causal aggregation: combine constraints from heterogeneous environments into one causal estimate."""

from .boosting import AggregateModel, BoostConfig, backfit, boost, oracle_l2_loss, pooled_forest, single_pass_backfit
from .constraints import (
    Constraint,
    StackedSystem,
    adjustment_constraint,
    assemble,
    check_identifiability,
    constraints_from_annotations,
    inner_product_constraint,
    iv_constraint,
    randomization_constraint,
)
from .errors import CausalAggError, NumericalError, ValidationError
from .harness import StudyManifest, emit_manifest, estimate_command, ingest, perturb_command, simulate_command
from .linear import BetaEstimate, confidence_intervals, gmm_estimate, ols_estimate, solve_just_identified, two_step_gmm
from .sem import EnvDataset, EnvironmentSpec, SemModel, build_sem, intervene, preset, sample
from .sparse import cif, dantzig_aggregate, lasso_cv, prescreen_then_aggregate

__version__ = "0.1.0"
