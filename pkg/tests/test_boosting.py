import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_agg.boosting import (
    AggregateModel,
    BoostConfig,
    alpha_objective,
    backfit,
    boost,
    downstream_order,
    oracle_l2_loss,
    orthogonality_score,
    pooled_forest,
    single_pass_backfit,
    solve_alpha,
    solve_alpha_moments,
)
from causal_agg.errors import NoRandomizedFeatures, TooFewSamples, ValidationError
from causal_agg.harness import boost_study_losses
from causal_agg.sem import EnvDataset, EnvironmentSpec, intervene, preset, sample
from causal_agg.trees import RegressionTree, TreeFitter, fit_tree
from oracles import grid_alpha_oracle


def env(X, Y, randomized, name="e"):
    data = np.column_stack([X, Y])
    names = tuple(f"X{j + 1}" for j in range(X.shape[1])) + ("Y",)
    return EnvDataset(name, names, data, X.shape[1], EnvironmentSpec(name, randomized=frozenset(randomized)))


def sim_envs(name, n, seed, target="I"):
    model, envs = preset(name, target=target)
    return model, [sample(intervene(model, e), n, [seed, k]) for k, e in enumerate(envs)]


# ---------------------------------------------------------------------------
# trees


def test_constant_targets_give_a_single_leaf():
    rng = np.random.default_rng(0)
    tree = fit_tree(rng.normal(size=(100, 2)), np.full(100, 3.5))
    assert tree.n_nodes == 1 and tree.depth == 0
    np.testing.assert_array_equal(tree.predict_local(rng.normal(size=(5, 2))), 3.5)


def best_stump_oracle(x, y):
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    best = None
    for i in range(1, len(xs)):
        if xs[i - 1] == xs[i]:
            continue
        sse = ((ys[:i] - ys[:i].mean()) ** 2).sum() + ((ys[i:] - ys[i:].mean()) ** 2).sum()
        if best is None or sse < best[0]:
            best = (sse, 0.5 * (xs[i - 1] + xs[i]))
    return best[1]


def test_stump_on_an_indicator_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 1000)
    y = (x > 0).astype(float)
    tree = fit_tree(x[:, None], y, max_depth=1, min_leaf=1)
    assert tree.depth == 1
    assert abs(tree.threshold[0] - best_stump_oracle(x, y)) < 1e-12
    assert abs(tree.threshold[0]) < 0.01
    leaves = tree.value[tree.left < 0]
    assert np.allclose(sorted(leaves), [0.0, 1.0], atol=0.05)


def test_duplicate_feature_values_cannot_split():
    tree = fit_tree(np.ones((50, 1)), np.arange(50.0), min_leaf=2)
    assert tree.n_nodes == 1


def test_tree_needs_two_leaves_worth_of_rows():
    with pytest.raises(TooFewSamples):
        fit_tree(np.zeros((15, 1)), np.zeros(15), min_leaf=10)


def test_tree_respects_depth_and_leaf_size():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    tree = fit_tree(X, y, max_depth=4, min_leaf=20)
    assert tree.depth <= 4
    leaf = np.array([np.sum(tree.predict_local(X) == v) for v in np.unique(tree.value[tree.left < 0])])
    assert leaf.min() >= 20


def test_tree_json_round_trip_and_feature_restriction():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 5))
    y = X[:, 1] - 2 * (X[:, 3] > 0)
    tree = TreeFitter(X[:, [1, 3]], (1, 3)).fit(y, 3, 5)
    again = RegressionTree.from_dict(json.loads(json.dumps(tree.to_dict())))
    np.testing.assert_array_equal(again.predict(X), tree.predict(X))
    Z = X.copy()
    Z[:, [0, 2, 4]] = rng.normal(size=(300, 3))
    np.testing.assert_array_equal(tree.predict(Z), tree.predict(X))


# ---------------------------------------------------------------------------
# re-weighting step


def test_single_environment_alpha_is_the_exact_ratio():
    rng = np.random.default_rng(4)
    h = rng.normal(size=200)
    r = 0.7 * h + rng.normal(size=200)
    alpha = solve_alpha([r], [[h]], 0.0)
    assert abs(alpha[0] - (r @ h) / (h @ h)) < 1e-9
    assert abs(np.mean((r - alpha[0] * h) * h)) < 1e-9


def test_large_ridge_weight_shrinks_alpha_to_zero():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    b = rng.normal(size=3)
    free = solve_alpha_moments(A, b, 0.0)
    assert np.linalg.norm(solve_alpha_moments(A, b, 1e6)) < 1e-3 * np.linalg.norm(free)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_environment_alpha_matches_grid_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    A = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    nu = float(rng.uniform(0.05, 1.0))
    alpha = solve_alpha_moments(A, b, nu)
    assert abs(alpha_objective(A, b, alpha, nu) - grid_alpha_oracle(A, b, nu)) <= 2e-3
    assert alpha_objective(A, b, alpha, nu) <= grid_alpha_oracle(A, b, nu) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_alpha_step_never_worsens_any_constraint(seed):
    # one round of real trees on a random boosting instance
    _, envs = sim_envs("boost_sim_A", 200, seed)
    resid = [d.Y for d in envs]
    trees = [TreeFitter(d.X[:, sorted(d.spec.randomized)], sorted(d.spec.randomized)).fit(r, 3, 10) for d, r in zip(envs, resid)]
    H = [[t.predict(d.X) for t in trees] for d in envs]
    alpha = solve_alpha(resid, H, 0.0)
    for e, d in enumerate(envs):
        before = abs(np.mean(resid[e] * H[e][e]))
        after = abs(np.mean((resid[e] - sum(a * h for a, h in zip(alpha, H[e]))) * H[e][e]))
        assert after <= before + 1e-9


# ---------------------------------------------------------------------------
# training


def test_environment_without_randomized_covariates_is_rejected():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 2))
    with pytest.raises(NoRandomizedFeatures):
        boost([env(X, X[:, 0], {0}, "a"), env(X, X[:, 0], set(), "b")])


def test_single_environment_boost_is_plain_l2_boosting():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(400, 2))
    Y = np.where(X[:, 0] > 0, np.where(X[:, 1] > 0.5, 2.0, 1.0), -1.0) + 0.1 * rng.normal(size=400)
    cfg = BoostConfig(nu=0.0, val_fraction=0.0, max_rounds=25, delta0=0.0)
    model = boost([env(X, Y, {0, 1})], cfg)
    fitter = TreeFitter(X, (0, 1))
    pred = np.zeros(400)
    for _ in range(model.rounds):
        pred += cfg.eta * fitter.fit(Y - pred, cfg.max_depth, cfg.min_leaf).predict_local(X)
    np.testing.assert_allclose(model.predict(X), pred, atol=1e-10)


def test_components_read_only_their_randomized_covariates():
    _, envs = sim_envs("boost_sim_A", 500, 0)
    model = boost(envs, BoostConfig(max_rounds=20))
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 5))
    for comp in model.components:
        Z = rng.normal(size=(50, 5))
        Z[:, list(comp.features)] = X[:, list(comp.features)]
        np.testing.assert_array_equal(comp.predict(Z), comp.predict(X))
    assert [c.features for c in model.components] == [(0, 1, 2), (0, 3)]


def test_model_is_sum_of_components_and_round_trips():
    _, envs = sim_envs("boost_sim_A", 500, 1)
    model = boost(envs, BoostConfig(max_rounds=15))
    X = np.random.default_rng(9).normal(size=(30, 5))
    np.testing.assert_allclose(model.predict(X), sum(c.predict(X) for c in model.components))
    again = AggregateModel.from_dict(json.loads(model.to_json()))
    np.testing.assert_array_equal(again.predict(X), model.predict(X))
    assert again.rounds == model.rounds and again.config == model.config


def test_fixed_seed_gives_identical_models():
    _, envs = sim_envs("boost_sim_C", 400, 2)
    cfg = BoostConfig(max_rounds=15, seed=3)
    assert boost(envs, cfg).to_json() == boost(envs, cfg).to_json()
    assert backfit(envs, cfg).to_json() == backfit(envs, cfg).to_json()


def test_config_validation():
    with pytest.raises(ValidationError):
        BoostConfig(eta=0.0)
    with pytest.raises(ValidationError):
        BoostConfig.from_dict({"learning_rate": 0.1})
    assert BoostConfig.from_dict(BoostConfig().to_dict()) == BoostConfig()


def test_zero_response_keeps_components_at_zero():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(300, 3))
    envs = [env(X, np.zeros(300), {0}, "a"), env(X, np.zeros(300), {1, 2}, "b")]
    model = backfit(envs)
    assert model.converged and model.rounds == 2
    assert np.all(model.predict(X) == 0.0)
    assert np.all(boost(envs).predict(X) == 0.0)


def test_single_environment_backfit_settles_after_one_refit():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(400, 2))
    Y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=400)
    envs = [env(X, Y, {0, 1})]
    model = backfit(envs)
    assert model.converged and model.rounds == 2
    np.testing.assert_allclose(model.predict(X), single_pass_backfit(envs).predict(X))


def test_single_pass_order_validation_and_downstream_order():
    model, envs = sim_envs("boost_sim_A", 200, 0)
    with pytest.raises(ValidationError):
        single_pass_backfit(envs, [0, 0])
    # X4 (index 3) is the most downstream randomized covariate, so e2 goes first
    assert downstream_order(envs, model.topological_order) == [1, 0]


def test_oracle_loss_trivial_cases():
    _, envs = sim_envs("boost_sim_A", 100, 0)
    assert oracle_l2_loss(lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)), envs) == 0.0
    assert oracle_l2_loss(lambda X: np.zeros(len(X)), lambda X: np.ones(len(X)), envs) == 1.0


def test_boost_reduces_orthogonality_score():
    _, envs = sim_envs("boost_sim_A", 2000, 4)
    _, held = sim_envs("boost_sim_A", 2000, 5)
    short = boost(envs, BoostConfig(max_rounds=2))
    long = boost(envs, BoostConfig(max_rounds=200))
    assert orthogonality_score(long, held) < orthogonality_score(short, held)


def test_pooled_forest_uses_every_covariate():
    _, envs = sim_envs("boost_sim_A", 300, 0)
    model = pooled_forest(envs, BoostConfig(forest_trees=3))
    assert model.components[0].features == (0, 1, 2, 3, 4)
    assert len(model.components[0].terms) == 3


# ---------------------------------------------------------------------------
# pilot-confirmed behaviour on the simulation presets (slow)


@pytest.mark.slow
def test_boost_loss_shrinks_with_n_and_single_pass_keeps_up():
    losses = boost_study_losses("boost_sim_A", [1_000, 10_000, 40_000], 0, methods=("boost", "single_pass"))
    b = losses["boost"]
    assert b[0] > b[1] > b[2] and b[1] < 0.15
    assert losses["single_pass"][2] <= 2 * b[2]


@pytest.mark.slow
def test_missing_randomization_makes_the_loss_plateau():
    ratio = [
        (lambda L: L[1] / L[0])(boost_study_losses("boost_sim_B", [1_000, 40_000], seed, methods=("boost",))["boost"])
        for seed in range(3)
    ]
    assert np.median(ratio) > 0.5


@pytest.mark.slow
def test_single_pass_needs_downstream_first_order():
    cfg = BoostConfig()
    gaps = []
    for seed in range(20):
        model, envs = sim_envs("boost_sim_A", 10_000, seed)
        every = EnvironmentSpec("t", randomized=frozenset(range(5)))
        test = [sample(intervene(model, every), 20_000, [seed, 999])]
        order = downstream_order(envs, model.topological_order)
        right = oracle_l2_loss(single_pass_backfit(envs, order, cfg), model.response_function, test)
        wrong = oracle_l2_loss(single_pass_backfit(envs, order[::-1], cfg), model.response_function, test)
        gaps.append(wrong - right)
    assert np.median(gaps) > 0


@pytest.mark.slow
def test_backfit_converges_and_tracks_boost_on_sim_a():
    # pilot over 20 seeds (n=1e3 and n=1e4): backfit always converged and was
    # worse than boost on 40-50% of seeds, short of the 70% instability target
    every = EnvironmentSpec("t", randomized=frozenset(range(5)))
    ratios = []
    for seed in range(10):
        model, envs = sim_envs("boost_sim_A", 1_000, seed, target="II")
        test = [sample(intervene(model, every), 20_000, [seed, 999])]
        fitted = backfit(envs, BoostConfig())
        assert fitted.converged
        ratios.append(
            oracle_l2_loss(fitted, model.response_function, test)
            / oracle_l2_loss(boost(envs, BoostConfig()), model.response_function, test)
        )
    assert 0.7 <= np.median(ratios) <= 1.4
