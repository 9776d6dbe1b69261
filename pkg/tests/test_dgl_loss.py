"""Tests for the DGL loss, its gradients and the pre-classifier closed form."""
import numpy as np
import pytest

from dglego.exceptions import ShapeError, SingularCovarianceError
from dglego.experiments.oracles import check_linear_expansion, finite_difference
from dglego.gp.dgl_loss import (
    dgl,
    dgl_from_kernel,
    dgl_grad,
    dgl_value_and_grad,
    kernel_projector,
    linear_context,
    linear_dgl,
    linear_dgl_grad,
    linear_dgl_pairwise,
)
from dglego.gp.kernels import kernel_matrix
from dglego.gp.posterior import loo_predict_all, loo_variance_all, posterior_inverse
from dglego.models.data import LabeledActivations, TargetEncoding
from dglego.models.kernel import Activation, KernelSpec

HAND_K = np.array([[1.0, 0.5], [0.5, 1.0]])
SMOOTH_SPEC = KernelSpec(depth=1, activation=Activation.ERF, sigma_w2=1.5, sigma_b2=0.1, jitter=1e-2)


def test_two_point_loss_by_hand():
    value = dgl_from_kernel(HAND_K, np.array([1.0, -1.0]), sigma2=0.0, return_similarity=True)
    np.testing.assert_allclose(value.per_point, [2.25, 2.25], rtol=1e-12)
    assert value.loss == pytest.approx(4.5, rel=1e-12)
    gram = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert -np.sum(gram * value.similarity) == pytest.approx(4.5, rel=1e-12)


def test_loss_is_summed_leave_one_out_error(small_data):
    value = dgl(SMOOTH_SPEC, small_data, return_similarity=True)
    post = posterior_inverse(kernel_matrix(SMOOTH_SPEC, small_data.H), value.sigma2)
    residual = loo_predict_all(post, small_data.targets) - small_data.targets
    assert value.loss == pytest.approx(float(np.sum(residual**2)), rel=1e-10)
    contraction = -float(np.sum(small_data.target_gram() * value.similarity))
    assert value.loss == pytest.approx(contraction, rel=1e-10)
    assert np.max(np.linalg.eigvalsh(value.similarity)) <= 1e-10 * np.max(np.abs(value.similarity))


def test_variance_term_adds_leave_one_out_variances(small_data):
    plain = dgl(SMOOTH_SPEC, small_data)
    with_var = dgl(SMOOTH_SPEC, small_data, include_variance=True)
    post = posterior_inverse(kernel_matrix(SMOOTH_SPEC, small_data.H), SMOOTH_SPEC.jitter)
    assert with_var.variance_term == pytest.approx(float(loo_variance_all(post).sum()), rel=1e-12)
    assert with_var.loss == pytest.approx(plain.loss + with_var.variance_term, rel=1e-12)


@pytest.mark.parametrize("include_variance", [False, True])
@pytest.mark.parametrize(
    "spec",
    [
        SMOOTH_SPEC,
        KernelSpec(depth=1, activation=Activation.RELU, sigma_w2=2.0, sigma_b2=0.1, jitter=1e-2),
        KernelSpec(depth=0, activation=Activation.LINEAR, sigma_w2=1.0, sigma_b2=0.2, jitter=1e-2),
    ],
)
def test_gradient_matches_finite_differences(rng, spec, include_variance):
    data = LabeledActivations.from_labels(rng.standard_normal((8, 3)), np.arange(8) % 2)
    analytic = dgl_grad(spec, data, include_variance)
    numeric = finite_difference(lambda H: dgl(spec, data.with_activations(H), include_variance).loss, data.H)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_minibatch_gradient_is_zero_outside_the_batch(small_data):
    indices = np.array([0, 3, 4, 7, 9])
    value, grad = dgl_value_and_grad(SMOOTH_SPEC, small_data, indices=indices)
    assert value.loss == pytest.approx(dgl(SMOOTH_SPEC, small_data.subset(indices)).loss, rel=1e-14)
    outside = np.setdiff1d(np.arange(small_data.n), indices)
    assert np.all(grad[outside] == 0.0)
    assert np.any(grad[indices] != 0.0)


def test_minibatch_needs_two_points(small_data):
    with pytest.raises(ShapeError):
        dgl(SMOOTH_SPEC, small_data, indices=[3])


def test_linear_loss_by_hand():
    """Two points per class at h = e_class with one-hot targets fit exactly."""
    H = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    one_hot = LabeledActivations.from_labels(H, [0, 0, 1, 1], encoding=TargetEncoding.ONE_HOT)
    assert linear_dgl(one_hot, ridge=0.0) == pytest.approx(0.0, abs=1e-12)
    context = linear_context(H)
    np.testing.assert_allclose(context.Sigma, 2.0 * np.eye(2))
    np.testing.assert_allclose(context.projector_gram[:2, :2], 0.5)
    np.testing.assert_allclose(context.projector_gram[:2, 2:], 0.0)
    zero_mean = LabeledActivations.from_labels(H, [0, 0, 1, 1])
    assert linear_dgl(zero_mean, ridge=0.0) == pytest.approx(0.0, abs=1e-12)


def test_linear_loss_without_structure_is_positive(rng):
    data = LabeledActivations.from_labels(rng.standard_normal((30, 3)), np.arange(30) % 3)
    value = linear_dgl(data, ridge=0.0)
    assert 0.0 < value <= float(np.sum(data.targets**2))
    assert linear_dgl_pairwise(linear_context(data.H), data.targets) == pytest.approx(value, rel=1e-10)


def test_linear_gradient_matches_finite_differences(rng):
    data = LabeledActivations.from_labels(rng.standard_normal((12, 3)), np.arange(12) % 3)
    numeric = finite_difference(lambda H: linear_dgl(data.with_activations(H), ridge=0.0), data.H)
    np.testing.assert_allclose(linear_dgl_grad(data, ridge=0.0), numeric, rtol=1e-5, atol=1e-8)


def test_linear_loss_is_invariant_under_invertible_maps(rng):
    data = LabeledActivations.from_labels(rng.standard_normal((25, 3)), np.arange(25) % 2)
    A = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
    base = linear_dgl(data, ridge=0.0)
    assert linear_dgl(data.with_activations(data.H @ A), ridge=0.0) == pytest.approx(base, rel=1e-9)


def test_projector_by_hand():
    P = kernel_projector(np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(P, 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]), atol=1e-15)


def test_projector_identities(rng):
    H = rng.standard_normal((20, 4))
    P = kernel_projector(H)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(P @ H, 0.0, atol=1e-10)
    assert np.trace(P) == pytest.approx(16.0)


def test_normalized_dataset_is_whitened(rng):
    context = linear_context(rng.standard_normal((40, 3)))
    np.testing.assert_allclose(context.normalized.T @ context.normalized, np.eye(3), atol=1e-10)


def test_small_jitter_linear_kernel_approaches_closed_form(rng):
    result = check_linear_expansion(rng, sizes=((200, 2), (400, 4)))
    assert result.passed, result.detail


def test_singular_covariance_and_shape_errors():
    H = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    data = LabeledActivations.from_labels(H, [0, 1, 0])
    with pytest.raises(SingularCovarianceError):
        linear_dgl(data, ridge=0.0)
    assert np.isfinite(linear_dgl(data, ridge=1e-3))
    with pytest.raises(ShapeError):
        linear_dgl(LabeledActivations.from_labels(np.eye(2), [0, 1]))


def test_default_ridge_absorbs_a_singular_covariance(rng):
    """The relative ridge solves a singular Sigma; only ridge=0 reports it."""
    H = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    data = LabeledActivations.from_labels(H, [0, 1, 0])
    assert np.isfinite(linear_dgl(data))
    assert np.all(np.isfinite(linear_dgl_grad(data)))
    with pytest.raises(SingularCovarianceError):
        linear_dgl_grad(data, ridge=0.0)
    regular = LabeledActivations.from_labels(rng.standard_normal((30, 3)), np.arange(30) % 2)
    assert linear_dgl(regular) == pytest.approx(linear_dgl(regular, ridge=0.0), rel=1e-6)
