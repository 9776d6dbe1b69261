"""Tests for SGD, Adam and Langevin updates."""
import numpy as np
import pytest

from dglego.exceptions import DivergenceError, ShapeError
from dglego.experiments.oracles import check_langevin_gp
from dglego.models.experiment import OptimizerConfig, OptimizerKind
from dglego.nn.layers import Layer, LayerActivation, LayerGrad, LayerStack, build_stack
from dglego.nn.optim import Optimizer, langevin_stationary_variance


def _stack(rng):
    return build_stack(3, 4, 1, 2, sigma_b2=0.1, rng=rng)


def _grads(stack, rng):
    return [
        LayerGrad(rng.standard_normal(layer.weights.shape), rng.standard_normal(layer.bias.shape))
        for layer in stack.layers
    ]


def test_sgd_step_with_weight_decay(rng):
    stack = _stack(rng)
    before = stack.copy()
    grads = _grads(stack, rng)
    Optimizer(OptimizerConfig(kind=OptimizerKind.SGD, lr=0.1, wd=0.01)).step(stack, grads)
    for old, new, g in zip(before.layers, stack.layers, grads):
        np.testing.assert_allclose(new.weights, old.weights - 0.1 * (g.weights + 0.01 * old.weights))
        np.testing.assert_allclose(new.bias, old.bias - 0.1 * (g.bias + 0.01 * old.bias))


@pytest.mark.parametrize("kind", list(OptimizerKind))
def test_zero_learning_rate_changes_nothing(rng, kind):
    stack = _stack(rng)
    before = stack.checksums()
    opt = Optimizer(OptimizerConfig(kind=kind, lr=0.0, temperature=0.0))
    for _ in range(3):
        opt.step(stack, _grads(stack, rng))
    assert stack.checksums() == before


def test_frozen_layers_and_missing_gradients_are_skipped(rng):
    stack = _stack(rng)
    stack.freeze(0)
    before = stack.checksums()
    grads = _grads(stack, rng)
    grads[1] = None
    Optimizer(OptimizerConfig(kind=OptimizerKind.ADAM, lr=0.1)).step(stack, grads)
    assert stack.checksums() == before

    grads = _grads(stack, rng)
    Optimizer(OptimizerConfig(kind=OptimizerKind.ADAM, lr=0.1)).step(stack, grads)
    after = stack.checksums()
    assert after[0] == before[0]
    assert after[1] != before[1]


def test_zero_temperature_langevin_is_sgd(rng):
    stack_sgd = _stack(rng)
    stack_langevin = stack_sgd.copy()
    sgd = Optimizer(OptimizerConfig(kind=OptimizerKind.SGD, lr=0.05, wd=0.001))
    langevin = Optimizer(OptimizerConfig(kind=OptimizerKind.LANGEVIN, lr=0.05, wd=0.001, temperature=0.0))
    for _ in range(5):
        grads = _grads(stack_sgd, rng)
        sgd.step(stack_sgd, grads)
        langevin.step(stack_langevin, grads)
    assert stack_sgd.checksums() == stack_langevin.checksums()


def test_adam_first_step_moves_by_the_learning_rate(rng):
    stack = _stack(rng)
    before = stack.copy()
    grads = _grads(stack, rng)
    Optimizer(OptimizerConfig(kind=OptimizerKind.ADAM, lr=0.01)).step(stack, grads)
    delta = before.layers[0].weights - stack.layers[0].weights
    np.testing.assert_allclose(delta, 0.01 * np.sign(grads[0].weights), rtol=1e-4)


def test_invalid_gradients_raise(rng):
    stack = _stack(rng)
    opt = Optimizer(OptimizerConfig(kind=OptimizerKind.SGD, lr=0.1))
    with pytest.raises(ShapeError):
        opt.step(stack, _grads(stack, rng)[:1])
    grads = _grads(stack, rng)
    grads[0].weights[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        opt.step(stack, grads)


def test_langevin_noise_is_seeded(rng):
    settings = OptimizerConfig(kind=OptimizerKind.LANGEVIN, lr=0.01, temperature=0.1, sigma_b2=0.1)
    first = _stack(rng)
    second = first.copy()
    grads = _grads(first, rng)
    Optimizer(settings, seed=3).step(first, grads)
    Optimizer(settings, seed=3).step(second, grads)
    assert first.checksums() == second.checksums()


def test_langevin_pins_biases_without_a_bias_prior(rng):
    stack = _stack(rng)
    before = [layer.bias.copy() for layer in stack.layers]
    settings = OptimizerConfig(kind=OptimizerKind.LANGEVIN, lr=0.01, temperature=0.1, sigma_b2=0.0)
    Optimizer(settings).step(stack, _grads(stack, rng))
    for old, layer in zip(before, stack.layers):
        np.testing.assert_array_equal(layer.bias, old)


def test_stationary_variance_of_parallel_chains():
    """20000 independent weights on a quadratic settle at 2T / (c (2 - lr c))."""
    chains = 20_000
    curvature, temperature, lr = 1.0, 0.5, 0.05
    layer = Layer(np.zeros((1, chains)), np.zeros(1), LayerActivation.IDENTITY)
    stack = LayerStack([layer])
    # prior variance sigma_w2 / fan_in = 1 adds 2T to the curvature
    settings = OptimizerConfig(
        kind=OptimizerKind.LANGEVIN, lr=lr, temperature=temperature, sigma_w2=float(chains)
    )
    opt = Optimizer(settings, seed=11)
    for _ in range(1500):
        opt.step(stack, [LayerGrad(curvature * layer.weights, np.zeros(1))])
    expected = langevin_stationary_variance(curvature + 2.0 * temperature, temperature, lr)
    assert np.var(layer.weights) == pytest.approx(expected, rel=0.05)


def test_stationary_variance_formula():
    assert langevin_stationary_variance(2.0, 0.5, 1e-9) == pytest.approx(0.25, rel=1e-6)
    assert langevin_stationary_variance(1.0, 1.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        langevin_stationary_variance(1.0, 1.0, 2.0)


def test_langevin_mean_prediction_is_the_gp_posterior_mean(rng):
    result = check_langevin_gp(rng, temperature=1e-2, steps=40_000, n_se=4.0)
    assert result.passed, result.detail
