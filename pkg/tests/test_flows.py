"""Pruebas de los modelos de flujo y del MVN."""

import numpy as np
import pytest
from scipy import integrate, special, stats

from src.core.diffcore import ParamStore, Tape
from src.errors import ConfigurationError, EvaluationError, FlowError
from src.flows.bijectors import IDENTITY_BOUND, Bernstein
from src.flows.layers import BijectorLayer
from src.flows.models import (
    FlowModel,
    StandardNormal,
    build_model,
    lambda_matrices,
    load_model,
    marginal_cdf,
    marginal_log_pdf,
    marginal_quantile,
    marginal_scale,
    save_model,
)
from src.flows.specs import ModelSpec

from .helpers import numeric_grad, perturb, small_spec

IDENTITY_DOMAIN = [(-IDENTITY_BOUND, IDENTITY_BOUND)] * 2
LOG_PHI_0 = -0.5 * np.log(2 * np.pi)

FEATURE_PATHWAY = ("feat", "shift", "theta_x", "lambda.lambda")


def _data(n=16, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2))
    x = rng.integers(0, 2, size=(n, 1)).astype(float)
    return y, x


# ---------------------------------------------------------------------------
# Densidad
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,family", [
    ("cf", "bernstein"), ("cf", "rqs"), ("maf", "bernstein"), ("maf", "rqs"),
    ("hcf", "bernstein"), ("hmaf", "bernstein"), ("mctm", "bernstein"),
])
def test_fresh_model_is_identity(kind, family):
    model = build_model(small_spec(kind, family=family, marginal_domain=IDENTITY_DOMAIN))
    assert model.log_prob(np.zeros((1, 2)))[0] == pytest.approx(2 * LOG_PHI_0, abs=1e-6)
    assert model.log_prob(np.zeros((1, 2)))[0] == pytest.approx(-1.837877, abs=1e-6)


def test_scaling_bijector_change_of_variables():
    spec = ModelSpec(kind="maf", dim=1, n_features=0)
    layer = BijectorLayer("double", 1, Bernstein(np.array([0.0, 2.0])))
    model = FlowModel(spec, ParamStore(), StandardNormal(), dependence=[layer])
    assert model.log_prob(np.zeros((1, 1)))[0] == pytest.approx(-0.225791, abs=1e-6)


@pytest.mark.parametrize("kind,conditional,family", [
    ("mvn", False, "bernstein"), ("mvn", True, "bernstein"),
    ("mctm", False, "bernstein"), ("mctm", True, "bernstein"),
    ("cf", False, "rqs"), ("maf", True, "bernstein"),
    ("hcf", False, "bernstein"), ("hcf", True, "rqs"), ("hmaf", True, "bernstein"),
])
def test_nll_gradient_matches_finite_differences(kind, conditional, family):
    model = build_model(small_spec(kind, conditional=conditional, family=family))
    perturb(model, 0.2, seed=1)
    y, x = _data()
    x = x if conditional else None

    tape = Tape()
    loss = model.nll(model.store.bind(tape), y, x)
    tape.backward(loss, model.store)
    analytic = model.store.grads.copy()

    start = model.store.snapshot()

    def f(values):
        model.store.values = values
        return float(model.nll(model.store.arrays(), y, x))

    numeric = numeric_grad(f, start, eps=1e-6)
    model.store.restore(start)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


def test_mvn_matches_closed_form():
    model = build_model(small_spec("mvn"))
    perturb(model, 0.5, seed=2)
    y, _ = _data(50)
    loc = model.store.get("mvn.loc")
    L = model.scale_matrix()
    expected = stats.multivariate_normal(loc, L @ L.T).logpdf(y)
    np.testing.assert_allclose(model.log_prob(y), expected, atol=1e-10)


def test_conditional_mvn_matches_closed_form():
    model = build_model(small_spec("mvn", conditional=True))
    perturb(model, 0.5, seed=3)
    y, _ = _data(10)
    x = np.array([1.0])
    loc = np.asarray(model.loc_scale(model.store.arrays(), x.reshape(1, 1))[0])[0]
    L = model.scale_matrix(x)[0]
    expected = stats.multivariate_normal(loc, L @ L.T).logpdf(y)
    np.testing.assert_allclose(model.log_prob(y, x), expected, atol=1e-10)


@pytest.mark.parametrize("kind", ["mvn", "mctm", "cf", "maf", "hcf", "hmaf"])
def test_conditional_collapse(kind):
    model = build_model(small_spec(kind, conditional=True))
    perturb(model, 0.3, seed=4)
    for name in model.store.slices:
        if any(tag in name for tag in FEATURE_PATHWAY):
            model.store.set(name, np.zeros_like(model.store.get(name)))
    if kind == "mvn":
        # el MVN condicional ve x solo por la primera capa de su red
        model.store.set("mvn.net.W0", np.zeros_like(model.store.get("mvn.net.W0")))
    y, _ = _data(8)
    np.testing.assert_array_equal(model.log_prob(y, np.zeros(1)), model.log_prob(y, np.ones(1)))


def test_concat_maf_conditions_first_coordinate():
    model = build_model(small_spec("maf", conditional=True, feature_mode="concat", n_layers=1))
    perturb(model, 0.3, seed=2)
    y, _ = _data(8)
    z_zero = model.transform(y, np.zeros(1))
    z_one = model.transform(y, np.ones(1))
    assert not np.allclose(z_zero[:, 0], z_one[:, 0])
    assert not np.allclose(z_zero[:, 1], z_one[:, 1])


def test_conditional_model_requires_features():
    model = build_model(small_spec("hcf", conditional=True))
    with pytest.raises(FlowError):
        model.log_prob(np.zeros((2, 2)))


def test_response_width_checked():
    model = build_model(small_spec("maf"))
    with pytest.raises(FlowError):
        model.log_prob(np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# Construcción
# ---------------------------------------------------------------------------

def test_mctm_parameter_count():
    model = build_model(ModelSpec(kind="mctm", dim=2, marginal_order=300))
    assert model.n_params == 2 * (300 + 2) + 1


def test_stage_lists():
    assert build_model(small_spec("hcf")).stage_kinds() == ["bernstein", "coupling"]
    assert build_model(small_spec("maf")).stage_kinds() == ["maf", "permutation", "maf"]
    assert build_model(small_spec("mctm")).stage_kinds() == ["bernstein", "triangular"]
    assert build_model(small_spec("hmaf")).stage_kinds()[0] == "bernstein"


def test_inconsistent_spec_lists_fields():
    with pytest.raises(ConfigurationError) as info:
        build_model(ModelSpec(kind="hcf", dim=1, marginal_order=5))
    assert info.value.fields == ["dim", "kind"]


def test_labels():
    assert small_spec("hcf").label == "HCF(B)"
    assert small_spec("maf", family="rqs").label == "MAF(S)"
    assert small_spec("mvn").label == "MVN"


def test_domain_inferred_from_data():
    y = np.array([[0.0, -1.0], [10.0, 1.0]])
    model = build_model(small_spec("hcf", marginal_domain=None), y)
    assert model.spec.marginal_domain[0] == pytest.approx((-0.5, 10.5))
    assert model.spec.marginal_domain[1] == pytest.approx((-1.1, 1.1))


@pytest.mark.parametrize("kind", ["mvn", "mctm", "hcf", "hmaf", "maf"])
def test_save_load_round_trip(kind, tmp_path):
    model = build_model(small_spec(kind, conditional=True))
    perturb(model, 0.3, seed=5)
    path = save_model(model, tmp_path / "model.json")
    restored = load_model(path)
    y, x = _data(12)
    np.testing.assert_array_equal(restored.log_prob(y, x), model.log_prob(y, x))
    assert restored.spec == model.spec


# ---------------------------------------------------------------------------
# Muestreo
# ---------------------------------------------------------------------------

def test_identity_samples_are_standard_normal():
    model = build_model(small_spec("cf"))
    n = 4000
    samples = model.sample(None, n, seed=0)
    assert np.all(np.abs(samples.mean(axis=0)) < 4 / np.sqrt(n))


@pytest.mark.parametrize("kind,family", [
    ("hcf", "bernstein"), ("maf", "bernstein"), ("cf", "rqs"), ("hmaf", "bernstein"),
    ("mctm", "bernstein"), ("mvn", "bernstein"),
])
def test_sample_inverts_transform(kind, family):
    model = build_model(small_spec(kind, conditional=True, family=family))
    perturb(model, 0.3, seed=6)
    x = np.array([1.0])
    samples = model.sample(x, 200, seed=7)
    z = np.random.default_rng(7).standard_normal((200, 2))
    if kind == "mvn":
        np.testing.assert_allclose(model.inverse(z, x), samples)
    else:
        assert np.max(np.abs(model.transform(samples, x) - z)) < 1e-6


def test_sampling_is_deterministic():
    model = build_model(small_spec("hcf"))
    perturb(model, 0.3, seed=8)
    assert np.array_equal(model.sample(None, 50, seed=3), model.sample(None, 50, seed=3))


def test_hybrid_coupling_preserves_first_marginal():
    model = build_model(small_spec("hcf"))
    perturb(model, 0.3, seed=9)
    samples = model.sample(None, 300, seed=11)
    z = np.random.default_rng(11).standard_normal((300, 2))
    # y₁ solo pasa por H₁: su cuantil marginal reproduce la muestra
    expected = marginal_quantile(model, stats.norm.cdf(z))[:, 0]
    np.testing.assert_allclose(samples[:, 0], expected, atol=1e-8)


# ---------------------------------------------------------------------------
# Marginales
# ---------------------------------------------------------------------------

def _mctm(seed=12):
    model = build_model(small_spec("mctm"))
    perturb(model, 0.3, seed=seed)
    model.store.set("h2.lambda.lambda", np.array([0.8]))
    return model


def test_marginal_scale_from_lambda():
    model = _mctm()
    lam = lambda_matrices(model)
    inv = np.linalg.inv(lam)
    np.testing.assert_allclose(marginal_scale(model), np.sqrt(np.diag(inv @ inv.T)))
    np.testing.assert_allclose(marginal_scale(model), [1.0, np.sqrt(1.64)])


def test_marginal_quantile_inverts_cdf():
    model = _mctm()
    y, _ = _data(40)
    np.testing.assert_allclose(marginal_quantile(model, marginal_cdf(model, y)), y, atol=1e-6)


def test_marginal_pdf_is_cdf_derivative():
    model = _mctm()
    y, _ = _data(30)
    h = 1e-5
    numeric = (marginal_cdf(model, y + h) - marginal_cdf(model, y - h)) / (2 * h)
    np.testing.assert_allclose(np.exp(marginal_log_pdf(model, y)), numeric, rtol=1e-5, atol=1e-9)


def test_marginal_pdf_integrates_joint_density():
    model = _mctm()
    grid = np.linspace(-15.0, 15.0, 6001)
    y1 = 0.4
    joint = np.exp(model.log_prob(np.column_stack([np.full_like(grid, y1), grid])))
    integral = integrate.simpson(joint, x=grid)
    marginal = np.exp(marginal_log_pdf(model, np.array([[y1, 0.0]]))[0, 0])
    assert integral == pytest.approx(marginal, rel=1e-5)


def test_logistic_base_marginals():
    model = build_model(small_spec("hcf", base="logistic"))
    perturb(model, 0.3, seed=5)
    y, _ = _data(30)
    u = marginal_cdf(model, y)
    np.testing.assert_allclose(u, special.expit(model.marginal_transform(y)), atol=1e-12)
    np.testing.assert_allclose(marginal_quantile(model, u), y, atol=1e-6)
    h = 1e-5
    numeric = (marginal_cdf(model, y + h) - marginal_cdf(model, y - h)) / (2 * h)
    np.testing.assert_allclose(np.exp(marginal_log_pdf(model, y)), numeric, rtol=1e-5, atol=1e-9)


def test_logistic_base_with_mixing_lambda_is_error():
    model = build_model(small_spec("mctm", base="logistic"))
    model.store.set("h2.lambda.lambda", np.array([0.8]))
    with pytest.raises(EvaluationError):
        marginal_cdf(model, np.zeros((1, 2)))


def test_marginal_functions_need_marginal_stage():
    with pytest.raises(EvaluationError):
        marginal_cdf(build_model(small_spec("maf")), np.zeros((1, 2)))
