import math

import numpy as np
import pytest

from causal_agg.constraints import assemble, randomization_constraint
from causal_agg.errors import Infeasible, ScreeningEmpty, TooLarge, ValidationError
from causal_agg.sem import HIGHDIM_BLANKET, EnvDataset, EnvironmentSpec, intervene, preset, sample
from causal_agg.simplex import simplex_minimize
from causal_agg.sparse import (
    LpProblem,
    _standardize,
    cif,
    dantzig_aggregate,
    lambda_max,
    lambda_path,
    lasso_cv,
    lasso_fit,
    path_to_csv,
    prescreen_lasso,
    prescreen_then_aggregate,
    select_lambda,
    theory_lambda_grid,
)
from oracles import grid_l1_oracle, random_integer_systems

def test_lp_matches_grid_oracle_on_small_integer_systems():
    for G, Z, lam in random_integer_systems(20):
        beta = dantzig_aggregate((G, Z), lam)
        assert np.max(np.abs(Z - G @ beta)) <= lam + 1e-7
        assert abs(np.abs(beta).sum() - grid_l1_oracle(G, Z, lam)) <= 0.02


def test_lp_never_worse_than_any_feasible_grid_point():
    for G, Z, lam in random_integer_systems(40, seed=1):
        assert np.abs(dantzig_aggregate((G, Z), lam)).sum() <= grid_l1_oracle(G, Z, lam) + 1e-9


def test_bland_and_dantzig_pricing_agree():
    for G, Z, lam in random_integer_systems(10, seed=3):
        a = dantzig_aggregate((G, Z), lam, rule="bland")
        b = dantzig_aggregate((G, Z), lam)
        assert abs(np.abs(a).sum() - np.abs(b).sum()) < 1e-9


def test_simplex_matches_scipy_linprog():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(4)
    for _ in range(30):
        m, n = rng.integers(2, 8, size=2)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m) + 0.5
        c = rng.uniform(0.1, 2.0, size=n)
        ref = linprog(c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
        if ref.status == 2:
            with pytest.raises(Infeasible):
                simplex_minimize(c, A, b)
            continue
        res = simplex_minimize(c, A, b)
        assert abs(res.fun - ref.fun) < 1e-7
        assert np.all(A @ res.x <= b + 1e-7)


def test_feasible_set_equivalence_on_a_lattice():
    rng = np.random.default_rng(5)
    lattice = np.array(np.meshgrid(*([np.linspace(-2.03, 2.03, 9)] * 2), indexing="ij")).reshape(2, -1).T
    for _ in range(20):
        G = rng.normal(size=(3, 2))
        Z = rng.normal(size=3)
        lam = float(rng.uniform(0.1, 1.5))
        lp = LpProblem.from_arrays(G, Z, lam)
        assert lp.A.shape == (6, 4) and lp.b.shape == (6,)
        for beta in lattice:
            direct = np.max(np.abs(Z - G @ beta)) <= lam
            gamma = LpProblem.from_beta(beta)
            np.testing.assert_array_equal(lp.to_beta(gamma), beta)
            assert lp.feasible(gamma, tol=0.0) == direct


def test_large_lambda_gives_zero_and_zero_lambda_inverts():
    rng = np.random.default_rng(6)
    G = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    Z = rng.normal(size=4)
    np.testing.assert_array_equal(dantzig_aggregate((G, Z), np.abs(Z).max()), np.zeros(4))
    np.testing.assert_allclose(dantzig_aggregate((G, Z), 0.0), np.linalg.solve(G, Z), atol=1e-6)


def test_conflicting_rows_are_infeasible_and_negative_lambda_rejected():
    G = np.array([[1.0], [1.0]])
    Z = np.array([0.0, 1.0])
    with pytest.raises(Infeasible):
        dantzig_aggregate((G, Z), 0.2)
    assert abs(dantzig_aggregate((G, Z), 0.5)[0] - 0.5) < 1e-9
    with pytest.raises(ValidationError):
        dantzig_aggregate((G, Z), -1.0)


def test_lambda_path_support_and_monotone_l1():
    rng = np.random.default_rng(7)
    G = rng.normal(size=(8, 6))
    Z = G @ np.array([2.0, 0, 0, -1.0, 0, 0]) + 0.05 * rng.normal(size=8)
    top = float(np.abs(Z).max())
    path = lambda_path((G, Z), np.geomspace(top, 0.05 * top, 15))
    assert path[0].support == ()
    l1 = [pt.l1 for pt in path]
    assert all(a <= b + 1e-9 for a, b in zip(l1, l1[1:]))
    assert set(path[-1].support) >= {0, 3}
    assert len(lambda_path((G, Z), [0.5])) == 1
    with pytest.raises(ValidationError):
        lambda_path((G, Z), [0.1, 0.5])
    text = path_to_csv(path[:2])
    assert text.splitlines()[0] == "lambda,l1_norm,support_size,X1,X2,X3,X4,X5,X6"
    assert len(text.splitlines()) == 3


def test_theory_grid_shape():
    grid = theory_lambda_grid(200, 50)
    assert grid == sorted(grid, reverse=True) and len(grid) == 20
    base = math.sqrt(math.log(200) / 50)
    assert abs(grid[0] - 4.0 * base) < 1e-12 and abs(grid[-1] - 0.05 * base) < 1e-12


@pytest.mark.parametrize("name,expected", [("fig4_left", (1.0, 0.0)), ("fig4_right", (0.0, 0.5))])
def test_minimal_l1_solution_of_a_single_randomization(name, expected):
    model, envs = preset(name)
    d = sample(intervene(model, envs[0]), 10_000, 0)
    beta = dantzig_aggregate(assemble([randomization_constraint(d, 0)], datasets=[d]), 0.0)
    assert np.max(np.abs(beta - np.array(expected))) < 0.1


@pytest.mark.slow
def test_highdim_support_recovery_with_validation_lambda():
    hits = 0
    for seed in range(20):
        model, envs = preset("highdim_200", seed=seed)

        def build(tag):
            ds = [sample(intervene(model, e), 50, [seed, tag, k]) for k, e in enumerate(envs[1:])]
            return assemble([randomization_constraint(d, k) for k, d in enumerate(ds)], datasets=ds)

        _, beta = select_lambda(build(0), build(1), theory_lambda_grid(200, 50))
        hits += abs(beta[98]) > 1e-8
    # frozen from a 20-seed pilot: 16 hits; two misses draw |beta_99| < 0.3
    assert hits >= 16


def test_select_lambda_skips_infeasible_grid_points():
    G = np.array([[1.0], [1.0]])
    Z = np.array([0.0, 1.0])
    lam, beta = select_lambda((G, Z), (G, Z), [2.0, 0.6, 0.1])
    assert lam == 0.6 and abs(beta[0] - 0.4) < 1e-9
    with pytest.raises(Infeasible):
        select_lambda((G, Z), (G, Z), [0.1])


def cif_dense_oracle_2d(J, M, q=math.inf, k=200_001):
    theta = np.linspace(0, 2 * np.pi, k)
    U = np.column_stack([np.cos(theta), np.sin(theta)])
    Jc = [j for j in range(2) if j not in J]
    U = U[np.abs(U[:, Jc]).sum(axis=1) <= np.abs(U[:, J]).sum(axis=1)]
    norms = np.abs(U).max(axis=1) if math.isinf(q) else np.linalg.norm(U, ord=q, axis=1)
    factor = len(J) ** (0.0 if math.isinf(q) else 1.0 / q)
    return float((np.abs(U @ np.asarray(M).T).max(axis=1) / norms).min() * factor)


def test_cif_identity_and_dense_oracle():
    value = cif([0], np.eye(2), math.inf, samples=200_000)
    assert 0.5 <= value <= 1.0
    assert abs(value - cif_dense_oracle_2d([0], np.eye(2))) < 0.05
    M = np.array([[2.0, 0.5], [-0.3, 1.0]])
    for q in (1, 2, math.inf):
        assert abs(cif([1], M, q, samples=200_000) - cif_dense_oracle_2d([1], M, q)) < 0.05


def test_cif_zero_matrix_kernel_and_size_limit():
    assert cif([0, 1], np.zeros((3, 3)), samples=1000) == 0.0
    # kernel direction (1, 1, 0) lies in the cone of J = {0}
    M = np.array([[1.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    assert cif([0], M, samples=1000) < 1e-6
    with pytest.raises(TooLarge):
        cif([0], np.eye(7))


def test_lasso_kkt_conditions():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(300, 20)) @ np.diag(rng.uniform(0.5, 3, 20))
    y = X[:, :3] @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=300)
    Xs, yc, *_ = _standardize(X, y)
    for lam in (0.5, 0.1, 0.02):
        fit = lasso_fit(X, y, lam)
        grad = Xs.T @ (yc - Xs @ fit.coef_std) / X.shape[0]
        assert np.all(np.abs(grad) <= lam + 1e-6)
        active = np.abs(fit.coef_std) > 1e-8
        np.testing.assert_allclose(grad[active], lam * np.sign(fit.coef_std[active]), atol=1e-4)


def test_lasso_soft_threshold_on_orthonormal_design():
    n = 64
    rng = np.random.default_rng(9)
    Q, _ = np.linalg.qr(rng.normal(size=(n, 4)) - 0.0)
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    X = Q * math.sqrt(n)  # centered, X^T X / n = I
    y = 5.0 * X[:, 0]
    fit = lasso_fit(X, y, 0.1)
    assert fit.support == (0,)
    assert abs(fit.coef_std[0] - 4.9) < 1e-6
    assert lasso_fit(X, y, lambda_max(X, y) * 1.01).support == ()


def test_lasso_cv_one_se_choice_is_no_smaller_than_min():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(200, 15))
    y = 2 * X[:, 0] - X[:, 4] + rng.normal(size=200)
    cv = lasso_cv(X, y, seed=1)
    assert cv.lam_1se >= cv.lam_min
    assert len(cv.lambdas) == 50 and abs(cv.lambdas[-1] / cv.lambdas[0] - 1e-3) < 1e-12
    assert {0, 4} <= set(cv.fit.support)


def test_prescreen_finds_most_of_the_markov_blanket():
    found = []
    for seed in range(10):
        model, _ = preset("highdim_200", seed=seed)
        sel = prescreen_lasso(sample(model, 1000, [seed, 0]), seed=seed)
        found.append(len(set(sel) & set(HIGHDIM_BLANKET)))
    assert np.mean(found) >= 5.0


def test_prescreen_then_aggregate_bookkeeping():
    model, _ = preset("highdim_200", seed=0)
    obs = sample(model, 1000, [0, 0])

    def builder(groups):
        return [
            sample(intervene(model, EnvironmentSpec(f"g{i}", randomized=frozenset(g))), 5000, [0, i + 1])
            for i, g in enumerate(groups)
        ]

    res = prescreen_then_aggregate(obs, builder, seed=0)
    assert len(res.groups) == 2 and sorted(sum(res.groups, ())) == list(res.selected)
    unselected = [j for j in range(200) if j not in res.selected]
    assert np.all(res.beta[unselected] == 0.0)
    cis = res.intervals()
    assert all(cis[j] is None for j in unselected)
    assert all(cis[j] is not None for j in res.selected)
    if 98 in res.selected:
        lo, hi = cis[98]
        assert hi - lo < 1.0


def test_prescreen_empty_selection_and_reused_data():
    rng = np.random.default_rng(11)
    spec = EnvironmentSpec("obs")
    data = np.column_stack([rng.normal(size=(100, 3)), np.ones(100)])
    obs = EnvDataset("obs", ("X1", "X2", "X3", "Y"), data, 3, spec)
    with pytest.raises(ScreeningEmpty):
        prescreen_then_aggregate(obs, lambda groups: [], lam=0.1)
    y = data[:, 0] * 3
    obs2 = EnvDataset("obs", obs.columns, np.column_stack([data[:, :3], y]), 3, spec)
    with pytest.raises(ValidationError):
        prescreen_then_aggregate(obs2, lambda groups: [obs2] * len(groups), lam=0.1)
