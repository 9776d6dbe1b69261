"""
Deep Gaussian Layer-wise (DGL) loss.

The DGL of a representation H with targets L is the summed squared error of
leave-one-out GP predictions under the top-network kernel:

    L_DGL = sum_n |l*_n - l_n|^2 = sum_n |(B L)_n|^2 / B_nn^2
          = -sum_nm (l_n . l_m) S_nm,   S_nm = -sum_q B_nq B_qm / B_qq^2

For a linear readout directly on top of H the small-jitter limit has the
closed form

    L_DGL@Linear = sum_n |l_n|^2 - sum_nm (l_n . l_m) [H Sigma^{-1} H^T]_nm,  Sigma = H^T H

which only needs a d x d solve.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from dglego.config import DEFAULT_SIGMA_RIDGE
from dglego.exceptions import ShapeError, SingularCovarianceError
from dglego.gp.kernels import kernel_matrix, kernel_matrix_vjp
from dglego.gp.posterior import PosteriorInverse, loo_variance_all, posterior_inverse
from dglego.models.data import LabeledActivations
from dglego.models.kernel import KernelSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DglValue:
    """
    Result of a DGL evaluation.

    Attributes:
        loss: Total loss (includes the variance term when requested)
        per_point: |l*_n - l_n|^2 for every evaluated point
        sigma2: Effective jitter used
        variance_term: Sum of leave-one-out variances, if requested
        similarity: Similarity matrix S, if requested
    """

    loss: float
    per_point: np.ndarray
    sigma2: float
    variance_term: Optional[float] = None
    similarity: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LinearDglContext:
    """Pre-classifier algebra for an N x d representation."""

    Sigma: np.ndarray
    projector_gram: np.ndarray
    normalized: np.ndarray
    ridge: float

    @property
    def projector(self) -> np.ndarray:
        """P = I - H Sigma^{-1} H^T."""
        return np.eye(self.projector_gram.shape[0]) - self.projector_gram


def _subset(data: LabeledActivations, indices: Optional[Sequence[int]]) -> LabeledActivations:
    if data.n < 2:
        raise ShapeError("DGL needs at least two points")
    if indices is None:
        return data
    sub = data.subset(indices)
    if sub.n < 2:
        raise ShapeError("DGL minibatch needs at least two points")
    return sub


def dgl_similarity(post: PosteriorInverse) -> np.ndarray:
    """S_nm = -sum_q B_nq B_qm / B_qq^2 (symmetric, negative semi-definite)."""
    B = post.B
    S = -(B / post.diag**2) @ B
    return 0.5 * (S + S.T)


def dgl_from_post(
    post: PosteriorInverse,
    targets: np.ndarray,
    include_variance: bool = False,
    return_similarity: bool = False,
) -> DglValue:
    """DGL value from an already factorized kernel."""
    L = np.asarray(targets, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    R = post.B @ L
    per_point = np.einsum("ij,ij->i", R, R) / post.diag**2
    loss = float(per_point.sum())
    variance_term = None
    if include_variance:
        variance_term = float(loo_variance_all(post).sum())
        loss += variance_term
    similarity = dgl_similarity(post) if return_similarity else None
    return DglValue(
        loss=loss,
        per_point=per_point,
        sigma2=post.sigma2,
        variance_term=variance_term,
        similarity=similarity,
    )


def dgl_from_kernel(
    K: np.ndarray,
    targets: np.ndarray,
    sigma2: Optional[float] = None,
    include_variance: bool = False,
    return_similarity: bool = False,
) -> DglValue:
    """
    DGL of a precomputed covariance matrix.

    Args:
        K: N x N covariance matrix
        targets: N x C targets
        sigma2: Jitter; None selects 1e-4 trace(K)/N
        include_variance: Add the summed leave-one-out variances
        return_similarity: Also return S

    Returns:
        DglValue
    """
    return dgl_from_post(posterior_inverse(K, sigma2), targets, include_variance, return_similarity)


def dgl(
    spec: KernelSpec,
    data: LabeledActivations,
    include_variance: bool = False,
    indices: Optional[Sequence[int]] = None,
    return_similarity: bool = False,
) -> DglValue:
    """
    DGL of a layer representation under the top-network kernel ``spec``.

    Args:
        spec: Top-network kernel
        data: Activations and targets
        include_variance: Add the summed leave-one-out variances
        indices: Optional minibatch of rows; the loss is evaluated on the sub-kernel
        return_similarity: Also return S

    Returns:
        DglValue

    Raises:
        FactorizationError: If the kernel cannot be factorized after jitter escalation
    """
    sub = _subset(data, indices)
    K = kernel_matrix(spec, sub.H)
    return dgl_from_kernel(K, sub.targets, spec.jitter, include_variance, return_similarity)


def dgl_value_and_grad(
    spec: KernelSpec,
    data: LabeledActivations,
    include_variance: bool = False,
    indices: Optional[Sequence[int]] = None,
) -> Tuple[DglValue, np.ndarray]:
    """
    DGL value and its exact gradient with respect to the activations.

    The jitter is held fixed at its effective value (an automatic jitter is
    not differentiated through).

    Returns:
        (DglValue, N x d gradient). Rows outside ``indices`` are zero.
    """
    sub = _subset(data, indices)
    K = kernel_matrix(spec, sub.H)
    post = posterior_inverse(K, spec.jitter)
    value = dgl_from_post(post, sub.targets, include_variance)

    B = post.B
    b = post.diag
    L = sub.targets
    R = B @ L
    # dLoss/dB with entries treated as independent
    G_B = 2.0 * (R / b[:, None] ** 2) @ L.T
    diag_term = -2.0 * np.einsum("ij,ij->i", R, R) / b**3
    if include_variance:
        diag_term -= 1.0 / b**2
    G_B[np.diag_indices_from(G_B)] += diag_term
    G_K = -B @ G_B @ B
    grad_sub = kernel_matrix_vjp(spec, sub.H, G_K)

    if indices is None:
        return value, grad_sub
    grad = np.zeros_like(data.H)
    np.add.at(grad, np.asarray(indices, dtype=np.int64), grad_sub)
    return value, grad


def dgl_grad(
    spec: KernelSpec,
    data: LabeledActivations,
    include_variance: bool = False,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Gradient dL_DGL/dH (N x d); see ``dgl_value_and_grad``."""
    return dgl_value_and_grad(spec, data, include_variance, indices)[1]


def _sigma_factor(H: np.ndarray, ridge: Optional[float]):
    N, d = H.shape
    if N <= d:
        raise ShapeError(f"pre-classifier DGL needs N > d, got N={N}, d={d}")
    Sigma = H.T @ H
    if ridge is None:
        ridge = DEFAULT_SIGMA_RIDGE * float(np.trace(Sigma)) / d
    Sigma = Sigma + ridge * np.eye(d)
    try:
        factor = linalg.cho_factor(Sigma, lower=True)
    except linalg.LinAlgError as e:
        raise SingularCovarianceError(
            f"Sigma = H^T H is singular (d={d}); pass a ridge epsilon > 0 to add epsilon*I"
        ) from e
    return Sigma, factor, ridge


def linear_dgl(data: LabeledActivations, ridge: Optional[float] = None) -> float:
    """
    Closed-form pre-classifier DGL.

    Args:
        data: Representation H (N x d, N > d) and targets
        ridge: epsilon added to Sigma. The default None adds 1e-8 trace(Sigma)/d,
            which keeps an exactly singular Sigma solvable; pass 0 for the
            exact form, the only setting under which a singular Sigma raises

    Returns:
        sum_n |l_n|^2 - sum_nm (l_n . l_m) [H Sigma^{-1} H^T]_nm

    Raises:
        SingularCovarianceError: If Sigma + ridge I is not positive definite
            (in practice only with ridge=0)
    """
    H, L = data.H, data.targets
    _, factor, _ = _sigma_factor(H, ridge)
    M = H.T @ L
    A = linalg.cho_solve(factor, M)
    return float(np.sum(L * L) - np.sum(M * A))


def linear_dgl_grad(data: LabeledActivations, ridge: Optional[float] = None) -> np.ndarray:
    """Gradient of ``linear_dgl``: 2 (H A - L) A^T with A = Sigma^{-1} H^T L (same ``ridge`` default)."""
    H, L = data.H, data.targets
    _, factor, _ = _sigma_factor(H, ridge)
    A = linalg.cho_solve(factor, H.T @ L)
    return 2.0 * (H @ A - L) @ A.T


def linear_context(H: np.ndarray, ridge: float = 0.0) -> LinearDglContext:
    """
    Sigma, H Sigma^{-1} H^T and the normalized dataset H Sigma^{-1/2}.

    Raises:
        SingularCovarianceError: If Sigma is not positive definite
    """
    H = np.asarray(H, dtype=np.float64)
    Sigma, factor, ridge = _sigma_factor(H, ridge)
    gram = H @ linalg.cho_solve(factor, H.T)
    evals, evecs = linalg.eigh(Sigma)
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return LinearDglContext(
        Sigma=Sigma,
        projector_gram=0.5 * (gram + gram.T),
        normalized=H @ inv_sqrt,
        ridge=ridge,
    )


def kernel_projector(H: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Projector onto the kernel of H H^T: P = I - H Sigma^{-1} H^T."""
    return linear_context(H, ridge).projector


def linear_dgl_pairwise(context: LinearDglContext, targets: np.ndarray) -> float:
    """const - sum_nm (l_n . l_m)(H~_n . H~_m) in normalized coordinates."""
    L = np.asarray(targets, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    projected = context.normalized.T @ L
    return float(np.sum(L * L) - np.sum(projected * projected))
