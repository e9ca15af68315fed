import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protobft import numeric
from protobft.errors import ShapeError
from protobft.softpool import KernelSpec, softpool, softpool_backward

from conftest import max_relative_error, random_params


def test_zero_params_give_zero_map(rng):
    p = random_params(rng).zeros_like()
    C = numeric.forward_representation(p, rng.normal(size=5))
    assert C.shape == (4, 4)
    assert not C.any()


def test_identity_weights_reshape_positive_input():
    p = numeric.ModelParams(np.eye(4), np.zeros(4), np.zeros((2, 4)), np.zeros(2), (2, 2))
    x = np.array([0.5, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(numeric.forward_representation(p, x), x.reshape(2, 2))


def test_representation_matches_extended_precision(rng):
    mpmath.mp.dps = 40
    p = random_params(rng, input_dim=6, proto_shape=(2, 3))
    x = rng.normal(size=6)
    C = numeric.forward_representation(p, x).ravel()
    for r in range(6):
        acc = mpmath.mpf(p.repr_b[r])
        for c in range(6):
            acc += mpmath.mpf(p.repr_w[r, c]) * mpmath.mpf(x[c])
        assert C[r] == pytest.approx(float(max(acc, 0)), rel=1e-14, abs=1e-15)


def test_representation_shape_error(rng):
    with pytest.raises(ShapeError):
        numeric.forward_representation(random_params(rng), np.ones(3))


def test_zero_decision_weights_uniform(rng):
    p = random_params(rng, num_classes=4)
    p = numeric.ModelParams(p.repr_w, p.repr_b, np.zeros_like(p.dec_w), np.zeros(4), p.proto_shape)
    probs = numeric.forward_decision(p, rng.normal(size=(4, 4)))
    np.testing.assert_allclose(probs, 0.25, rtol=0, atol=1e-15)


def test_softmax_closed_form():
    np.testing.assert_allclose(numeric.softmax(np.array([0.0, math.log(3.0)])), [0.25, 0.75], atol=1e-15)


def test_decision_shape_error(rng):
    with pytest.raises(ShapeError):
        numeric.forward_decision(random_params(rng), np.ones(5))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=16, max_size=16), st.integers(0, 2**32 - 1))
def test_softmax_outputs_are_a_distribution(vals, seed):
    p = random_params(np.random.default_rng(seed), scale=3.0)
    probs = numeric.forward_decision(p, np.array(vals).reshape(4, 4))
    assert np.all(probs > 0)
    assert abs(probs.sum() - 1.0) <= 1e-9
    assert np.all(np.isfinite(probs))


def test_cross_entropy_cases():
    assert numeric.cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert numeric.cross_entropy(np.full(4, 0.25), 2) == pytest.approx(math.log(4), abs=1e-15)
    assert numeric.cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexError):
        numeric.cross_entropy(np.array([0.5, 0.5]), 2)


def sample_loss(params, x, label, target, lam, spec):
    """Single-sample objective evaluated from the forward functions only."""
    C = numeric.forward_representation(params, x)
    loss = numeric.cross_entropy(numeric.forward_decision(params, C), label)
    if lam:
        P = softpool(C, spec) if spec else C
        loss += lam * float(np.linalg.norm(P.ravel() - target))
    return loss


def analytic_grad(params, x, label, target, lam, spec):
    C = numeric.forward_representation(params, x)
    P = softpool(C, spec) if spec else C
    diff = P.ravel() - target
    up = (diff / np.linalg.norm(diff)).reshape(P.shape)
    gC = softpool_backward(C, spec, up) if spec else up
    return numeric.backward(params, x, label, gC, lam)


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
@pytest.mark.parametrize("spec", [KernelSpec(2, 2), KernelSpec(2, 1), None])
def test_backward_matches_finite_differences(lam, spec):
    rng = np.random.default_rng(int(lam * 10) + (0 if spec is None else spec.stride * 100))
    for _ in range(20):
        p = random_params(rng, input_dim=5, proto_shape=(4, 4), num_classes=3, scale=2.0)
        x = rng.normal(size=5) * 2
        label = int(rng.integers(3))
        shape = (4, 4) if spec is None else spec.output_shape(4, 4)
        target = rng.normal(size=shape[0] * shape[1])
        a = analytic_grad(p, x, label, target, lam, spec)
        n = numeric.finite_difference_gradient(lambda q: sample_loss(q, x, label, target, lam, spec), p, 1e-5)
        assert max_relative_error(a.flat(), n.flat()) < 1e-4


def test_lambda_zero_is_plain_cross_entropy(rng):
    p = random_params(rng)
    x = rng.normal(size=5)
    g0 = numeric.backward(p, x, 1, None, 0.0)
    g1 = numeric.backward(p, x, 1, rng.normal(size=(4, 4)), 0.0)
    np.testing.assert_array_equal(g0.flat(), g1.flat())


def test_zero_input_zero_bias_repr_grad_zero(rng):
    p = random_params(rng)
    p = numeric.ModelParams(p.repr_w, np.zeros_like(p.repr_b), p.dec_w, np.zeros_like(p.dec_b), p.proto_shape)
    g = numeric.backward(p, np.zeros(5), 0, rng.normal(size=(4, 4)), 1.0)
    assert not g.repr_w.any()


def test_backward_shape_error(rng):
    p = random_params(rng)
    with pytest.raises(ShapeError):
        numeric.backward(p, rng.normal(size=5), 0, np.ones((3, 3)), 1.0)


def test_sgd_step_arithmetic(rng):
    p = numeric.ModelParams(np.ones((1, 1)), np.ones(1), np.ones((1, 1)), np.ones(1), (1, 1))
    g = p.replace_tensors([np.full_like(t, 0.5) for t in p.tensors()])
    stepped = numeric.sgd_step(p, g, 0.01)
    assert all(np.all(t == 0.995) for t in stepped.tensors())
    unchanged = numeric.sgd_step(p, g, 0.0)
    np.testing.assert_array_equal(unchanged.flat(), p.flat())


def test_sgd_two_steps_equal_summed_gradient():
    # exact arithmetic on dyadic values makes the comparison bitwise
    rng = np.random.default_rng(7)
    p = random_params(rng)
    dyadic = lambda t: np.round(t * 256) / 256
    p = p.replace_tensors([dyadic(t) for t in p.tensors()])
    g1 = p.replace_tensors([dyadic(rng.normal(size=t.shape)) for t in p.tensors()])
    g2 = p.replace_tensors([dyadic(rng.normal(size=t.shape)) for t in p.tensors()])
    eta = 0.25
    two = numeric.sgd_step(numeric.sgd_step(p, g1, eta), g2, eta)
    one = numeric.sgd_step(p, g1.replace_tensors([a + b for a, b in zip(g1, g2)]), eta)
    np.testing.assert_array_equal(two.flat(), one.flat())


def test_finite_difference_on_known_functions():
    p = numeric.ModelParams(np.full((1, 1), 3.0), np.zeros(1), np.zeros((1, 1)), np.zeros(1), (1, 1))
    g = numeric.finite_difference_gradient(lambda q: 0.5 * q.repr_w[0, 0] ** 2, p, 1e-5)
    assert g.repr_w[0, 0] == pytest.approx(3.0, abs=1e-6)
    g = numeric.finite_difference_gradient(lambda q: 2.0 * q.dec_b[0], p, 1e-5)
    assert g.dec_b[0] == pytest.approx(2.0, rel=1e-9)
    assert g.repr_w[0, 0] == 0.0


def test_batch_gradient_is_mean_of_sample_gradients(rng):
    p = random_params(rng)
    X = rng.normal(size=(6, 5))
    y = rng.integers(3, size=6)
    gb = numeric.backward_batch(p, X, y, None, 0.0)
    mean = np.mean([numeric.backward(p, X[i], int(y[i]), None, 0.0).flat() for i in range(6)], axis=0)
    np.testing.assert_allclose(gb.flat(), mean, rtol=1e-12, atol=1e-15)


def test_init_within_fan_in_bounds(rng):
    p = numeric.init_params(9, (2, 2), 3, rng)
    assert np.all(np.abs(p.repr_w) <= 1 / 3) and np.all(np.abs(p.dec_w) <= 1 / 2)


def test_outputs_finite_for_large_inputs(rng):
    p = random_params(rng, scale=50.0)
    x = rng.normal(size=5) * 1e3
    probs = numeric.forward_decision(p, numeric.forward_representation(p, x))
    assert np.all(np.isfinite(probs))
    g = numeric.backward(p, x, 0, None, 0.0)
    assert np.all(np.isfinite(g.flat()))
