import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_agg.errors import BadIndex, CyclicGraph, OverlapError, ResponseIntervention, UnknownPreset, ValidationError
from causal_agg.sem import (
    HIGHDIM_BLANKET,
    PRESETS,
    EnvDataset,
    EnvironmentSpec,
    Equation,
    Noise,
    SemModel,
    build_sem,
    dumps_model,
    env_from_dict,
    env_to_dict,
    intervene,
    model_from_dict,
    model_to_dict,
    preset,
    sample,
)


def linear_model():
    return preset("linear_exp_A")[0]


def test_linear_model_topological_order_and_beta():
    model = linear_model()
    # covariates 0..4, response 5; X5 (index 4) is a child of Y
    assert model.topological_order == (0, 1, 2, 3, 5, 4)
    np.testing.assert_array_equal(model.beta, [0, 1, 0, 2, 0])


def test_two_cycle_is_rejected():
    eqs = (Equation(coefs={1: 1.0}), Equation(coefs={0: 1.0}))
    with pytest.raises(CyclicGraph):
        SemModel(2, eqs, Equation())


def test_cycle_through_response_is_rejected():
    # X1 <- Y and Y <- X1
    with pytest.raises(CyclicGraph):
        SemModel(1, (Equation(coefs={1: 1.0}),), Equation(coefs={0: 1.0}))


def test_parent_index_out_of_range():
    with pytest.raises(BadIndex):
        SemModel(2, (Equation(coefs={7: 1.0}), Equation()), Equation())


def test_nonzero_mean_disturbance_rejected():
    with pytest.raises(ValidationError):
        SemModel(1, (Equation(noise=Noise(mean=1.0)),), Equation())


def test_empty_covariate_model_samples_pure_noise():
    model = SemModel(0, (), Equation())
    d = sample(model, 500, 3)
    assert d.data.shape == (500, 1)
    expected = np.random.default_rng(3).standard_normal(500)
    np.testing.assert_array_equal(d.Y, expected)


def test_single_row_sample_shape():
    model, envs = preset("linear_exp_A")
    d = sample(intervene(model, envs[0]), 1, 0)
    assert d.data.shape == (1, 5 + 1 + 1)


def test_same_seed_is_bit_identical():
    model, envs = preset("linear_exp_D")
    a = sample(intervene(model, envs[3]), 200, [4, 2])
    b = sample(intervene(model, envs[3]), 200, [4, 2])
    assert a.data.tobytes() == b.data.tobytes()
    c = sample(intervene(model, envs[3]), 200, [4, 3])
    assert not np.array_equal(a.data, c.data)


def test_randomization_replaces_equation_and_keeps_the_rest():
    model, envs = preset("linear_exp_A")
    e2 = intervene(model, envs[1])
    for j in range(5):
        if j in (2, 4):
            assert e2.covariate_eqs[j] == Equation()
        else:
            assert e2.covariate_eqs[j] == model.covariate_eqs[j]
    assert e2.response_eq == model.response_eq


def test_empty_intervention_is_identity():
    model = linear_model()
    out = intervene(model, EnvironmentSpec("same"))
    assert out.covariate_eqs == model.covariate_eqs
    assert out.response_eq == model.response_eq
    assert out.instruments == model.instruments


def test_response_intervention_rejected():
    with pytest.raises(ResponseIntervention):
        intervene(linear_model(), EnvironmentSpec("bad", randomized=frozenset({5})))


def test_out_of_range_intervention_rejected():
    with pytest.raises(BadIndex):
        intervene(linear_model(), EnvironmentSpec("bad", randomized=frozenset({9})))


def test_randomized_and_shifted_overlap_rejected():
    with pytest.raises(OverlapError):
        EnvironmentSpec("bad", randomized=frozenset({1}), shifts={1: Noise()})


def test_instrument_enters_its_target():
    model, envs = preset("linear_exp_A")
    m1 = intervene(model, envs[0])
    assert m1.columns == ("X1", "X2", "X3", "X4", "X5", "Y", "I")
    assert m1.covariate_eqs[0].coefs[6] == 1.0
    d = sample(m1, 20_000, 0)
    assert abs(np.corrcoef(d.column("I"), d.X[:, 0])[0, 1]) > 0.3
    # exclusion: the instrument is uncorrelated with the structural residual
    resid = d.Y - d.X @ model.beta
    assert abs(np.mean(d.column("I") * resid)) < 0.05


def test_shift_adds_to_disturbance_only():
    model = linear_model()
    spec = EnvironmentSpec("s", shifts={2: Noise(scale=0.0, mean=0.0)})
    out = intervene(model, spec)
    a = sample(model, 100, 1)
    b = sample(out, 100, 1)
    # a zero shift still consumes no extra randomness that alters the other draws
    np.testing.assert_allclose(a.data, b.data)


def test_fully_randomized_covariates_uncorrelated_with_noise():
    model, envs = preset("linear_exp_C")
    d = sample(intervene(model, envs[0]), 1_000_000, 11)
    resid = d.Y - d.X @ model.beta
    cov = (d.X - d.X.mean(0)).T @ (resid - resid.mean()) / d.n
    assert np.all(np.abs(cov) < 0.01)


def test_surgery_removes_confounding():
    model, envs = preset("linear_exp_A")
    n = 100_000
    for seed in range(20):
        for spec in envs[1:]:
            d = sample(intervene(model, spec), n, [seed, 1])
            resid = d.Y - d.X @ model.beta
            for j in spec.randomized:
                r = np.corrcoef(d.X[:, j], resid)[0, 1]
                assert abs(r) < 3 / np.sqrt(n) * 5


def test_observational_confounding_is_visible():
    model = linear_model()
    d = sample(model, 50_000, 0)
    resid = d.Y - d.X @ model.beta
    assert abs(np.corrcoef(d.X[:, 0], resid)[0, 1]) > 0.3


def test_linear_exp_a_environments():
    _, envs = preset("linear_exp_A")
    e1, e2, e3 = envs
    assert e1.instrument_names == ("I",)
    assert e1.instruments[0].targets == {0: 1.0}
    assert e2.randomized == {2, 4}
    assert e3.randomized == {1}
    assert e3.known_parents == {3: frozenset({0, 2})}


def test_boost_sim_a_environments_and_function():
    model, envs = preset("boost_sim_A")
    assert [e.randomized for e in envs] == [{0, 1, 2}, {0, 3}]
    x = np.array([[1.0, 1.0, 0.0, 0.0, 0.0], [-1.0, 0.5, -2.0, -2.0, 0.0]])
    # row 1: 1 + 1 - 2 = 0; row 2: 0 + 1 + 0 + 2 + 3 = 6
    np.testing.assert_allclose(model.response_function(x), [0.0, 6.0])


def test_fig4_right_minimal_l1_point():
    # the single randomization constraint is beta1 + c*beta2 = 1
    for name, c in (("fig4_left", 0.5), ("fig4_right", 2.0)):
        model, _ = preset(name)
        assert model.covariate_eqs[1].coefs == {0: c}
        np.testing.assert_array_equal(model.beta, [1.0, 0.0])


def test_highdim_blanket_structure():
    model, envs = preset("highdim_200", seed=5)
    assert model.p == 200 and len(envs) == 201
    assert set(np.flatnonzero(model.beta)) == {98}
    # Markov blanket: parents, children, co-parents of children, and latent-linked covariates
    p = model.p
    children = {j for j, eq in enumerate(model.covariate_eqs) if p in eq.parents}
    coparents = set().union(*(model.covariate_eqs[j].parents for j in children)) - {p}
    latent_linked = {j for j, eq in enumerate(model.covariate_eqs) if eq.latent}
    blanket = set(np.flatnonzero(model.beta)) | children | coparents | latent_linked
    assert blanket == set(HIGHDIM_BLANKET)


def test_highdim_coefficients_depend_on_seed():
    a = preset("highdim_200", seed=1)[0]
    b = preset("highdim_200", seed=2)[0]
    assert a.beta[98] != b.beta[98]
    assert preset("highdim_200", seed=1)[0].beta[98] == a.beta[98]


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("linear_exp_Z")


@pytest.mark.parametrize("name", PRESETS)
def test_every_preset_samples(name):
    model, envs = preset(name)
    for k, e in enumerate(envs[:3]):
        d = sample(intervene(model, e), 30, k)
        assert d.n == 30 and np.all(np.isfinite(d.data))


def test_model_json_round_trip():
    for name in ("linear_exp_A", "boost_sim_C", "fig4_left"):
        model = preset(name)[0]
        again = model_from_dict(json.loads(dumps_model(model)))
        assert model_to_dict(again) == model_to_dict(model)
        assert again.topological_order == model.topological_order
    spec = preset("linear_exp_B")[1][2]
    assert env_from_dict(json.loads(json.dumps(env_to_dict(spec)))) == spec


def test_build_sem_from_description():
    model = build_sem(
        {
            "covariates": [{"latent": {"0": 1.0}}, {"coefs": {"0": 2.0}}],
            "response": {"coefs": {"1": 3.0}, "latent": {"0": 1.0}},
            "latent": [{"dist": "bernoulli", "p": 0.5, "centered": True}],
        }
    )
    assert model.p == 2 and model.num_latent == 1
    np.testing.assert_array_equal(model.beta, [0.0, 3.0])


def test_override_cannot_add_parents():
    model = linear_model()
    spec = EnvironmentSpec("o", overrides={0: Equation(coefs={3: 1.0})})
    with pytest.raises(ValidationError):
        intervene(model, spec)


def test_override_changes_coefficient():
    model = linear_model()
    spec = EnvironmentSpec("o", overrides={2: Equation(coefs={0: -3.0, 1: 2.0})})
    out = intervene(model, spec)
    assert out.covariate_eqs[2].coefs == {0: -3.0, 1: 2.0}


def test_dataset_restrict_reindexes_annotations():
    model, envs = preset("linear_exp_A")
    d = sample(intervene(model, envs[2]), 10, 0)
    r = d.restrict([3, 0, 1, 2])
    assert r.covariate_names == ("X4", "X1", "X2", "X3")
    assert r.spec.randomized == {2}
    assert r.spec.known_parents == {0: frozenset({1, 3})}
    np.testing.assert_array_equal(r.X[:, 0], d.X[:, 3])


def test_dataset_rejects_missing_values():
    spec = EnvironmentSpec("x")
    with pytest.raises(ValidationError):
        EnvDataset("x", ("X1", "Y"), np.array([[1.0, np.nan]]), 1, spec)


@st.composite
def dags(draw):
    p = draw(st.integers(1, 8))
    order = draw(st.permutations(range(p + 1)))
    eqs = []
    rank = {v: i for i, v in enumerate(order)}
    for v in range(p + 1):
        earlier = [u for u in range(p + 1) if rank[u] < rank[v]]
        if v == p:
            earlier = [u for u in earlier if u < p]
        parents = draw(st.lists(st.sampled_from(earlier), unique=True, max_size=3)) if earlier else []
        eqs.append(Equation(coefs={u: draw(st.floats(-2, 2)) or 0.5 for u in parents}))
    return p, eqs


@settings(max_examples=60, deadline=None)
@given(dags())
def test_random_acyclic_specs_sort_topologically(spec):
    p, eqs = spec
    model = SemModel(p, tuple(eqs[:p]), eqs[p])
    pos = {v: i for i, v in enumerate(model.topological_order)}
    assert sorted(pos) == list(range(p + 1))
    for v, eq in enumerate(eqs):
        for u in eq.parents:
            assert pos[u] < pos[v]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sets(st.integers(0, 4), max_size=5))
def test_response_invariant_under_intervention(seed, randomized):
    model = linear_model()
    out = intervene(model, EnvironmentSpec("e", randomized=frozenset(randomized)))
    assert out.response_eq == model.response_eq
    np.testing.assert_array_equal(out.beta, model.beta)
    a = sample(out, 5, seed)
    b = sample(out, 5, seed)
    assert a.data.tobytes() == b.data.tobytes()
