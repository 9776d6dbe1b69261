"""Tests for the NNGP covariance functions."""
import numpy as np
import pytest

from dglego.exceptions import ShapeError
from dglego.experiments.oracles import finite_difference
from dglego.gp.kernels import (
    erf_step,
    kernel_cross,
    kernel_diag,
    kernel_matrix,
    kernel_matrix_jacobian_row,
    kernel_matrix_vjp,
    kernel_value,
    relu_step,
)
from dglego.models.kernel import Activation, KernelSpec


def test_depth_zero_is_the_scaled_linear_kernel(rng):
    """Without activated layers the kernel is sigma_w2 a.b / d + sigma_b2."""
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    for activation in Activation:
        spec = KernelSpec(depth=0, activation=activation, sigma_w2=1.7, sigma_b2=0.3)
        assert kernel_value(spec, a, b) == pytest.approx(1.7 * a @ b / 4 + 0.3, rel=1e-14)


def test_orthonormal_rows_give_identity_kernel():
    spec = KernelSpec(depth=0, activation=Activation.LINEAR, sigma_w2=3.0, sigma_b2=0.0)
    np.testing.assert_allclose(kernel_matrix(spec, np.eye(3)), np.eye(3), atol=1e-15)


def test_relu_step_closed_forms():
    """Coincident inputs halve the variance; orthogonal inputs give r / (2 pi)."""
    coincident = relu_step(2.0, 2.0, 2.0, sigma_w2=2.0, sigma_b2=0.0)
    assert float(coincident.value) == pytest.approx(2.0)
    orthogonal = relu_step(1.0, 0.0, 4.0, sigma_w2=1.0, sigma_b2=0.5)
    assert float(orthogonal.value) == pytest.approx(0.5 + 2.0 / (2.0 * np.pi))
    assert float(orthogonal.d_ab) == pytest.approx(0.25)


def test_erf_step_matches_arcsine_formula():
    """Erf recursion equals (2 sigma_w2 / pi) arcsin(2c / sqrt((1 + 2a)(1 + 2b)))."""
    step = erf_step(0.7, 0.2, 1.3, sigma_w2=1.5, sigma_b2=0.1)
    expected = 0.1 + (3.0 / np.pi) * np.arcsin(0.4 / np.sqrt(2.4 * 3.6))
    assert float(step.value) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.ERF, Activation.LINEAR])
@pytest.mark.parametrize("depth", [0, 1, 3])
def test_matrix_agrees_with_pairwise_values(rng, activation, depth):
    """Every entry of K(D) equals kernel_value and the matrix is exactly symmetric."""
    H = rng.standard_normal((6, 3))
    spec = KernelSpec(depth=depth, activation=activation, sigma_w2=1.4, sigma_b2=0.05)
    K = kernel_matrix(spec, H)
    assert np.array_equal(K, K.T)
    pairwise = np.array([[kernel_value(spec, a, b) for b in H] for a in H])
    np.testing.assert_allclose(K, pairwise, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(kernel_diag(spec, H), np.diag(K), rtol=1e-13)


def test_cross_covariance_matches_matrix_block(rng):
    H = rng.standard_normal((7, 4))
    spec = KernelSpec(depth=2, activation=Activation.RELU, sigma_w2=2.0, sigma_b2=0.1)
    K = kernel_matrix(spec, H)
    np.testing.assert_allclose(kernel_cross(spec, H[:3], H), K[:3], rtol=1e-13)


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.ERF])
def test_jacobian_row_matches_finite_differences(rng, activation):
    """Row n of the Jacobian, including the self-covariance entry."""
    H = rng.standard_normal((5, 3))
    spec = KernelSpec(depth=2, activation=activation, sigma_w2=1.5, sigma_b2=0.1)
    n = 2

    def row_entry(m):
        def fn(h):
            moved = H.copy()
            moved[n] = h
            return kernel_matrix(spec, moved)[n, m]

        return fn

    jac = kernel_matrix_jacobian_row(spec, H, n)
    for m in range(H.shape[0]):
        numeric = finite_difference(row_entry(m), H[n])
        np.testing.assert_allclose(jac[m], numeric, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.ERF, Activation.LINEAR])
def test_vjp_matches_finite_differences(rng, activation):
    """Contracting an upstream gradient equals d sum(G * K(H)) / dH."""
    H = rng.standard_normal((5, 3))
    G = rng.standard_normal((5, 5))
    spec = KernelSpec(depth=1, activation=activation, sigma_w2=1.2, sigma_b2=0.2)
    numeric = finite_difference(lambda X: float(np.sum(G * kernel_matrix(spec, X))), H)
    np.testing.assert_allclose(kernel_matrix_vjp(spec, H, G), numeric, rtol=1e-6, atol=1e-8)


def test_invalid_inputs_raise():
    spec = KernelSpec(depth=1)
    with pytest.raises(ShapeError):
        kernel_value(spec, np.ones(3), np.ones(4))
    with pytest.raises(ShapeError):
        kernel_value(spec, np.array([1.0, np.nan]), np.ones(2))
    with pytest.raises(ShapeError):
        kernel_matrix(spec, np.ones((1, 3)))
    with pytest.raises(ShapeError):
        kernel_matrix_vjp(spec, np.ones((3, 2)), np.ones((2, 2)))


def test_spec_helpers():
    spec = KernelSpec(depth=2, activation=Activation.ERF, sigma_w2=1.0)
    updated = spec.with_params(sigma_b2=0.2)
    assert updated.sigma_b2 == 0.2 and updated.depth == 2
    assert "erf/depth=2" in spec.describe()
    assert "jitter=auto" in spec.describe()
