"""Pruebas de los bijectors: valores conocidos, monotonía, inversas y log-det."""

import numpy as np
import pytest

from src.core import diffcore as dc
from src.errors import BijectorError, RootFindingError
from src.flows.bijectors import (
    IDENTITY_BOUND,
    RQS,
    Bernstein,
    Shift,
    TriangularLinear,
    bernstein_basis,
    bernstein_constrain,
    bernstein_constrain_recursive,
    bernstein_forward,
    bernstein_inverse,
    bernstein_log_det,
    chain,
    lambda_matrix,
    rqs_constrain,
    rqs_forward,
    rqs_inverse,
    rqs_log_det,
    shift_apply,
    shift_inverse,
    triangular_combine,
)
from src.flows.roots import find_increasing_root

from .helpers import numeric_grad, tape_grad


def _random_theta(rng, n, order, scale=1.0):
    return bernstein_constrain(scale * rng.standard_normal((n, order + 2)))


def _finite_log_det(forward, y, h=1e-5):
    return np.log((forward(y + h) - forward(y - h)) / (2 * h))


# ---------------------------------------------------------------------------
# Restricción de coeficientes
# ---------------------------------------------------------------------------

def test_constrain_zero_raw_order_two():
    theta = bernstein_constrain(np.zeros(4))
    np.testing.assert_allclose(theta, [-3.693147, 0.0, 3.693147], atol=1e-6)


def test_constrain_span_telescopes(rng):
    raw = rng.standard_normal(9)
    theta = bernstein_constrain(raw)
    span = np.logaddexp(0.0, raw[-1]) + 3.0 + np.logaddexp(0.0, raw[0]) + 3.0
    assert theta[-1] - theta[0] == pytest.approx(span, abs=1e-12)


def test_constrain_softmax_allocation():
    raw = np.array([0.0, np.log(2.0), 0.0, 0.0, 0.0])
    theta = bernstein_constrain(raw)
    increments = np.diff(theta) / (theta[-1] - theta[0])
    np.testing.assert_allclose(increments, [0.5, 0.25, 0.25], atol=1e-8)


def test_constrain_is_increasing_with_boundaries(rng):
    raw = 5.0 * rng.standard_normal((200, 12))
    theta = bernstein_constrain(raw)
    assert np.all(np.diff(theta, axis=-1) > 0)
    assert np.all(theta[:, 0] <= -3.0)
    assert np.all(theta[:, -1] >= 3.0)


def test_constrain_rejects_non_finite():
    with pytest.raises(BijectorError):
        bernstein_constrain(np.array([0.0, np.nan, 0.0]))


def test_recursive_constraint(rng):
    raw = rng.standard_normal((50, 7))
    theta = bernstein_constrain_recursive(raw)
    assert theta.shape == (50, 7)
    np.testing.assert_allclose(theta[:, 0], raw[:, 0])
    assert np.all(np.diff(theta, axis=-1) > 0)


def test_constrain_gradient_flows_through_forward(rng):
    raw = rng.standard_normal(8)
    y = np.linspace(-4.0, 4.0, 9)

    def loss(r):
        return dc.sum_(bernstein_forward(y, bernstein_constrain(r), -3.0, 3.0))

    np.testing.assert_allclose(tape_grad(loss, raw), numeric_grad(lambda r: float(loss(r)), raw, 1e-6),
                               rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------------------
# Polinomio de Bernstein
# ---------------------------------------------------------------------------

def test_basis_sums_to_one_at_high_order():
    t = np.linspace(0.0, 1.0, 101)
    basis = bernstein_basis(t, 300)
    assert np.all(np.isfinite(basis))
    np.testing.assert_allclose(basis.sum(axis=-1), 1.0, atol=1e-10)


def test_linear_order_one():
    theta = np.array([0.0, 1.0])
    assert bernstein_forward(0.25, theta) == pytest.approx(0.25)
    assert bernstein_forward(1.5, theta) == pytest.approx(1.5)
    assert bernstein_forward(-0.5, theta) == pytest.approx(-0.5)


def test_constant_coefficients_give_constant():
    y = np.linspace(0.0, 1.0, 11)
    np.testing.assert_allclose(bernstein_forward(y, np.full(6, 2.5)), 2.5, atol=1e-12)


def test_log_det_identity_and_scaled_domain():
    theta = np.array([0.0, 1.0])
    y = np.linspace(-1.0, 2.0, 13)
    np.testing.assert_allclose(bernstein_log_det(y, theta), 0.0, atol=1e-12)
    np.testing.assert_allclose(bernstein_log_det(y, theta, 0.0, 2.0), np.log(0.5), atol=1e-12)


def test_zero_raw_is_identity_on_default_bound():
    theta = bernstein_constrain(np.zeros(12))
    y = np.linspace(-6.0, 6.0, 25)
    np.testing.assert_allclose(bernstein_forward(y, theta, -IDENTITY_BOUND, IDENTITY_BOUND), y, atol=1e-8)
    np.testing.assert_allclose(bernstein_log_det(y, theta, -IDENTITY_BOUND, IDENTITY_BOUND), 0.0, atol=1e-8)


def test_log_det_matches_finite_differences(rng):
    theta = _random_theta(rng, 300, 10)
    y = rng.uniform(-5.0, 5.0, size=300)
    analytic = bernstein_log_det(y, theta, -4.0, 4.0)
    numeric = _finite_log_det(lambda v: bernstein_forward(v, theta, -4.0, 4.0), y)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)


def test_log_det_rejects_decreasing_coefficients():
    with pytest.raises(BijectorError):
        bernstein_log_det(np.array([0.5]), np.array([1.0, 0.0]))


def test_bernstein_strictly_monotone(rng):
    theta = _random_theta(rng, 1000, 8, scale=2.0)
    a = rng.uniform(-6.0, 6.0, size=1000)
    b = a + rng.uniform(1e-3, 2.0, size=1000)
    assert np.all(bernstein_forward(a, theta, -4.0, 4.0) < bernstein_forward(b, theta, -4.0, 4.0))


def test_inverse_known_values():
    theta = np.array([0.0, 1.0])
    assert bernstein_inverse(0.25, theta) == pytest.approx(0.25, abs=1e-9)
    # por debajo de ϑ₀ la inversa es la recta de extrapolación
    assert bernstein_inverse(-2.0, theta) == pytest.approx(-2.0, abs=1e-12)


def test_inverse_round_trip_including_extrapolation(rng):
    theta = _random_theta(rng, 10_000, 10)
    y = rng.uniform(-7.0, 7.0, size=10_000)
    z = bernstein_forward(y, theta, -4.0, 4.0)
    back = bernstein_inverse(z, theta, -4.0, 4.0)
    assert np.max(np.abs(back - y)) < 1e-6


@pytest.mark.parametrize("order", [5, 50, 300])
def test_round_trip_and_log_det_by_order(order, rng):
    theta = _random_theta(rng, 1000, order)
    y = rng.uniform(-7.0, 7.0, size=1000)
    z = bernstein_forward(y, theta, -4.0, 4.0)
    assert np.max(np.abs(bernstein_inverse(z, theta, -4.0, 4.0) - y)) < 1e-6

    # lejos de los bordes del dominio, donde h'' salta
    inside = np.min(np.abs(y[:, None] - np.array([-4.0, 4.0])), axis=-1) > 1e-3
    analytic = bernstein_log_det(y, theta, -4.0, 4.0)
    numeric = _finite_log_det(lambda v: bernstein_forward(v, theta, -4.0, 4.0), y)
    np.testing.assert_allclose(analytic[inside], numeric[inside], rtol=1e-4, atol=1e-6)


def test_inverse_residual_below_tolerance(rng):
    theta = _random_theta(rng, 500, 20)
    z = rng.uniform(-3.0, 3.0, size=500)
    y = bernstein_inverse(z, theta, -4.0, 4.0)
    assert np.max(np.abs(bernstein_forward(y, theta, -4.0, 4.0) - z)) < 1e-9


def test_inverse_rejects_non_increasing():
    with pytest.raises(BijectorError):
        bernstein_inverse(0.1, np.array([0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# RQS
# ---------------------------------------------------------------------------

def test_rqs_zero_raw_is_identity():
    params = rqs_constrain(np.zeros(3 * 6 - 1))
    y = np.array([-3.9, -1.0, 0.3, 2.2])
    np.testing.assert_allclose(rqs_forward(y, params), y, atol=1e-12)
    np.testing.assert_allclose(rqs_log_det(y, params), 0.0, atol=1e-12)


def test_rqs_identity_tails(rng):
    params = rqs_constrain(rng.standard_normal(3 * 5 - 1))
    y = np.array([params.bound + 5.0, -params.bound - 0.1])
    np.testing.assert_allclose(rqs_forward(y, params), y)
    np.testing.assert_allclose(rqs_log_det(y, params), 0.0)


def test_rqs_round_trip_and_log_det(rng):
    raw = rng.standard_normal((2000, 3 * 8 - 1))
    params = rqs_constrain(raw)
    y = rng.uniform(-6.0, 6.0, size=2000)
    z = rqs_forward(y, params)
    assert np.max(np.abs(rqs_inverse(z, params) - y)) < 1e-8

    # lejos de los nudos, donde la segunda derivada salta
    knots = params.knots(params.widths)
    inside = np.min(np.abs(y[:, None] - knots), axis=-1) > 1e-3
    numeric = _finite_log_det(lambda v: rqs_forward(v, params), y)
    np.testing.assert_allclose(rqs_log_det(y, params)[inside], numeric[inside], rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("bins", [8, 32])
def test_rqs_round_trip_and_log_det_by_bins(bins, rng):
    params = rqs_constrain(rng.standard_normal((1000, 3 * bins - 1)))
    y = rng.uniform(-6.0, 6.0, size=1000)
    z = rqs_forward(y, params)
    assert np.max(np.abs(rqs_inverse(z, params) - y)) < 1e-6

    knots = params.knots(params.widths)
    inside = np.min(np.abs(y[:, None] - knots), axis=-1) > 1e-3
    numeric = _finite_log_det(lambda v: rqs_forward(v, params), y)
    np.testing.assert_allclose(rqs_log_det(y, params)[inside], numeric[inside], rtol=1e-4, atol=1e-6)


def test_rqs_strictly_monotone(rng):
    params = rqs_constrain(2.0 * rng.standard_normal((1000, 3 * 4 - 1)))
    a = rng.uniform(-5.0, 5.0, size=1000)
    b = a + rng.uniform(1e-3, 2.0, size=1000)
    assert np.all(rqs_forward(a, params) < rqs_forward(b, params))


def test_rqs_rejects_wrong_raw_size():
    with pytest.raises(BijectorError):
        rqs_constrain(np.zeros(7))


# ---------------------------------------------------------------------------
# Triangular, desplazamiento y cadenas
# ---------------------------------------------------------------------------

def test_triangular_identity_and_example():
    w = np.array([1.0, 2.0])
    np.testing.assert_allclose(triangular_combine(w, np.eye(2)), w)
    lam = np.array([[1.0, 0.0], [0.5, 1.0]])
    np.testing.assert_allclose(triangular_combine(w, lam), [1.0, 2.5])


def test_triangular_dimension_mismatch():
    with pytest.raises(BijectorError):
        triangular_combine(np.ones(3), np.eye(2))


def test_triangular_matches_matrix_product(rng):
    entries = rng.standard_normal(6)
    w = rng.standard_normal((20, 4))
    lam = lambda_matrix(entries, 4)
    bij = TriangularLinear(entries, 4)
    np.testing.assert_allclose(bij.forward(w), w @ lam.T, atol=1e-12)
    np.testing.assert_allclose(bij.inverse(bij.forward(w)), w, atol=1e-10)
    assert np.all(bij.forward_log_det(w) == 0.0)


def test_shift():
    h = np.array([1.0, 1.0])
    beta = np.array([-1.0, 2.0])
    np.testing.assert_allclose(shift_apply(h, np.zeros(2)), h)
    np.testing.assert_allclose(shift_apply(h, beta), [0.0, 3.0])
    np.testing.assert_array_equal(shift_inverse(shift_apply(h, beta), beta), h)


def test_chain_of_identities():
    bij = chain([Shift(np.zeros(2)), TriangularLinear(np.zeros(1), 2)])
    y = np.array([[0.4, -1.0]])
    np.testing.assert_allclose(bij.forward(y), y)
    np.testing.assert_allclose(bij.forward_log_det(y), 0.0)


def test_chain_of_opposite_shifts():
    beta = np.array([0.7, -1.3])
    bij = chain([Shift(beta), Shift(-beta)])
    y = np.array([2.0, 3.0])
    np.testing.assert_allclose(bij.forward(y), y)


def test_three_stage_chain(rng):
    theta = bernstein_constrain(rng.standard_normal(10))
    stages = [
        Bernstein(theta, -4.0, 4.0),
        TriangularLinear(np.array([0.8]), 2),
        RQS(rqs_constrain(rng.standard_normal(3 * 6 - 1))),
    ]
    bij = chain(stages)
    y = rng.uniform(-3.0, 3.0, size=(500, 2))
    assert np.max(np.abs(bij.inverse(bij.forward(y)) - y)) < 1e-6

    total = np.zeros_like(y)
    current = y
    for stage in stages:
        total = total + stage.forward_log_det(current)
        current = stage.forward(current)
    np.testing.assert_allclose(bij.forward_log_det(y), total, rtol=1e-12)


def test_bernstein_from_raw_recursive(rng):
    bij = Bernstein.from_raw(rng.standard_normal(6), -2.0, 2.0, constraint="recursive")
    assert bij.order == 5
    y = np.linspace(-3.0, 3.0, 50)
    np.testing.assert_allclose(bij.inverse(bij.forward(y)), y, atol=1e-6)


# ---------------------------------------------------------------------------
# Raíces
# ---------------------------------------------------------------------------

def test_root_finder_expands_bracket():
    targets = np.array([-20.0, 0.5, 30.0])

    def func(x, rows):
        return x ** 3 - targets[rows]

    roots = find_increasing_root(func, np.zeros(3), np.ones(3))
    np.testing.assert_allclose(roots, np.cbrt(targets), atol=1e-9)


def test_root_finder_without_sign_change():
    def func(x, rows):
        return np.full_like(x, -1.0)

    with pytest.raises(RootFindingError):
        find_increasing_root(func, np.zeros(2), np.ones(2), dimension=1)
