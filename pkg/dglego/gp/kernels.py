"""
Analytic covariance functions of fully-connected top-networks.

A top-network with ``depth`` activated layers followed by a linear readout
induces, in the infinite-width limit, the covariance function obtained from
the base (fan-in normalized) linear kernel

    k0(a, b) = sigma_w2 * (a . b) / d + sigma_b2

followed by ``depth`` applications of a one-layer recursion acting on the
triple (k_aa, k_ab, k_bb) of self- and cross-covariances:

ReLU (arc-cosine)::

    theta = arccos(k_ab / sqrt(k_aa k_bb))
    k'    = sigma_b2 + sigma_w2 / (2 pi) * sqrt(k_aa k_bb) * (sin theta + (pi - theta) cos theta)
    dk'/dk_ab = sigma_w2 (pi - theta) / (2 pi)
    dk'/dk_aa = sigma_w2 sin(theta) sqrt(k_bb / k_aa) / (4 pi)

Erf::

    u  = 2 k_ab / sqrt((1 + 2 k_aa)(1 + 2 k_bb))
    k' = sigma_b2 + (2 sigma_w2 / pi) arcsin(u)
    dk'/dk_ab = (2 sigma_w2 / pi) / sqrt(1 - u^2) * 2 / sqrt((1 + 2 k_aa)(1 + 2 k_bb))
    dk'/dk_aa = -(2 sigma_w2 / pi) / sqrt(1 - u^2) * u / (1 + 2 k_aa)

Linear::

    k' = sigma_b2 + sigma_w2 k_ab

Derivatives with respect to the activations are chained through the
recursion down to the base kernel, where dk0_ab/da = sigma_w2 b / d and
dk0_aa/da = 2 sigma_w2 a / d.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Union

import numpy as np

from dglego.config import COINCIDENT_TOLERANCE
from dglego.exceptions import ShapeError
from dglego.models.data import LabeledActivations
from dglego.models.kernel import Activation, ArrayOrFloat, KernelSpec, KernelStep

logger = logging.getLogger(__name__)

Activations = Union[np.ndarray, LabeledActivations]


def _as_matrix(H: Activations) -> np.ndarray:
    if isinstance(H, LabeledActivations):
        H = H.H
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] < 1:
        raise ShapeError(f"expected an N x d activation matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ShapeError("activations contain non-finite values")
    return H


def relu_step(s_a: ArrayOrFloat, c: ArrayOrFloat, s_b: ArrayOrFloat, sigma_w2: float, sigma_b2: float) -> KernelStep:
    """Arc-cosine recursion step with partial derivatives."""
    s_a, c, s_b = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (s_a, c, s_b)))
    r = np.sqrt(s_a * s_b)
    positive = r > 0.0
    safe_r = np.where(positive, r, 1.0)
    cos = np.where(positive, np.clip(c / safe_r, -1.0, 1.0), 0.0)
    coincident = (1.0 - cos) < COINCIDENT_TOLERANCE
    theta = np.where(coincident, 0.0, np.arccos(cos))
    sin = np.where(coincident, 0.0, np.sqrt(np.maximum(1.0 - cos * cos, 0.0)))

    value = sigma_b2 + sigma_w2 / (2.0 * np.pi) * r * (sin + (np.pi - theta) * cos)
    d_ab = sigma_w2 * (np.pi - theta) / (2.0 * np.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_aa = np.where(s_a > 0.0, sigma_w2 * sin * np.sqrt(s_b / np.where(s_a > 0.0, s_a, 1.0)) / (4.0 * np.pi), 0.0)
        d_bb = np.where(s_b > 0.0, sigma_w2 * sin * np.sqrt(s_a / np.where(s_b > 0.0, s_b, 1.0)) / (4.0 * np.pi), 0.0)
    return KernelStep(value=value, d_aa=d_aa, d_ab=d_ab, d_bb=d_bb)


def erf_step(s_a: ArrayOrFloat, c: ArrayOrFloat, s_b: ArrayOrFloat, sigma_w2: float, sigma_b2: float) -> KernelStep:
    """Error-function recursion step with partial derivatives."""
    s_a, c, s_b = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (s_a, c, s_b)))
    one_a = 1.0 + 2.0 * s_a
    one_b = 1.0 + 2.0 * s_b
    denom = np.sqrt(one_a * one_b)
    u = np.clip(2.0 * c / denom, -1.0, 1.0)
    value = sigma_b2 + (2.0 * sigma_w2 / np.pi) * np.arcsin(u)
    outer = (2.0 * sigma_w2 / np.pi) / np.sqrt(np.maximum(1.0 - u * u, np.finfo(float).tiny))
    return KernelStep(
        value=value,
        d_aa=-outer * u / one_a,
        d_ab=outer * 2.0 / denom,
        d_bb=-outer * u / one_b,
    )


def linear_step(s_a: ArrayOrFloat, c: ArrayOrFloat, s_b: ArrayOrFloat, sigma_w2: float, sigma_b2: float) -> KernelStep:
    """Identity-activation recursion step."""
    s_a, c, s_b = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (s_a, c, s_b)))
    zeros = np.zeros_like(c)
    return KernelStep(value=sigma_b2 + sigma_w2 * c, d_aa=zeros, d_ab=np.full_like(c, sigma_w2), d_bb=zeros)


STEPS: Dict[Activation, Callable[..., KernelStep]] = {
    Activation.RELU: relu_step,
    Activation.ERF: erf_step,
    Activation.LINEAR: linear_step,
}


def activation_step(spec: KernelSpec, s_a: ArrayOrFloat, c: ArrayOrFloat, s_b: ArrayOrFloat) -> KernelStep:
    """Apply one recursion step of ``spec``'s activation."""
    return STEPS[Activation(spec.activation)](s_a, c, s_b, spec.sigma_w2, spec.sigma_b2)


@dataclass
class _Propagation:
    """Final covariances plus sensitivities to the base-kernel inputs."""

    cross: np.ndarray
    self_rows: np.ndarray
    self_cols: np.ndarray
    d_cross: np.ndarray  # d cross / d base cross
    d_row_self: np.ndarray  # d cross / d base self-covariance of the row point
    d_col_self: np.ndarray  # d cross / d base self-covariance of the column point
    d_self_rows: np.ndarray  # d self / d base self, per row point


def _propagate(
    spec: KernelSpec, s_rows: np.ndarray, c0: np.ndarray, s_cols: np.ndarray, track: bool = False
) -> _Propagation:
    cross = c0
    s_r, s_c = s_rows, s_cols
    shape = c0.shape
    d_cross = np.ones(shape) if track else None
    d_row = np.zeros(shape) if track else None
    d_col = np.zeros(shape) if track else None
    d_self_r = np.ones_like(s_r)
    d_self_c = np.ones_like(s_c)

    for _ in range(spec.depth):
        step = activation_step(spec, s_r[:, None], cross, s_c[None, :])
        self_r = activation_step(spec, s_r, s_r, s_r)
        self_c = activation_step(spec, s_c, s_c, s_c)
        if track:
            d_row = step.d_aa * d_self_r[:, None] + step.d_ab * d_row
            d_col = step.d_bb * d_self_c[None, :] + step.d_ab * d_col
            d_cross = step.d_ab * d_cross
            d_self_r = (self_r.d_aa + self_r.d_ab + self_r.d_bb) * d_self_r
            d_self_c = (self_c.d_aa + self_c.d_ab + self_c.d_bb) * d_self_c
        cross = step.value
        s_r, s_c = self_r.value, self_c.value

    return _Propagation(
        cross=cross,
        self_rows=s_r,
        self_cols=s_c,
        d_cross=d_cross,
        d_row_self=d_row,
        d_col_self=d_col,
        d_self_rows=d_self_r,
    )


def _base(spec: KernelSpec, A: np.ndarray, B: np.ndarray):
    d = A.shape[1]
    c0 = spec.sigma_w2 * (A @ B.T) / d + spec.sigma_b2
    s_a = spec.sigma_w2 * np.einsum("ij,ij->i", A, A) / d + spec.sigma_b2
    s_b = spec.sigma_w2 * np.einsum("ij,ij->i", B, B) / d + spec.sigma_b2
    return s_a, c0, s_b


def kernel_value(spec: KernelSpec, h_a: np.ndarray, h_b: np.ndarray) -> float:
    """
    Covariance K(h_a, h_b) of the top-network described by ``spec``.

    Args:
        spec: Top-network kernel description
        h_a: Activation vector of length d
        h_b: Activation vector of length d

    Returns:
        The scalar covariance

    Raises:
        ShapeError: If the vectors differ in length or contain non-finite values
    """
    a = np.asarray(h_a, dtype=np.float64)
    b = np.asarray(h_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape or a.size < 1:
        raise ShapeError(f"kernel_value needs two vectors of equal length, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ShapeError("kernel_value received non-finite input")
    s_a, c0, s_b = _base(spec, a[None, :], b[None, :])
    return float(_propagate(spec, s_a, c0, s_b).cross[0, 0])


def kernel_matrix(spec: KernelSpec, H: Activations) -> np.ndarray:
    """
    Covariance matrix K(D) of all training-point pairs.

    The upper triangle is computed and mirrored so the result is exactly
    symmetric.
    """
    H = _as_matrix(H)
    if H.shape[0] < 2:
        raise ShapeError("kernel_matrix needs at least two points")
    s, c0, _ = _base(spec, H, H)
    K = _propagate(spec, s, c0, s).cross
    return np.triu(K) + np.triu(K, 1).T


def kernel_cross(spec: KernelSpec, H_test: Activations, H_train: Activations) -> np.ndarray:
    """Covariances K(x*, x_n) between test rows and training rows."""
    A = _as_matrix(H_test)
    B = _as_matrix(H_train)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    s_a, c0, s_b = _base(spec, A, B)
    return _propagate(spec, s_a, c0, s_b).cross


def kernel_diag(spec: KernelSpec, H: Activations) -> np.ndarray:
    """Self-covariances K(h_n, h_n)."""
    H = _as_matrix(H)
    d = H.shape[1]
    s = spec.sigma_w2 * np.einsum("ij,ij->i", H, H) / d + spec.sigma_b2
    for _ in range(spec.depth):
        s = activation_step(spec, s, s, s).value
    return s


def kernel_matrix_jacobian_row(spec: KernelSpec, H: Activations, n: int) -> np.ndarray:
    """
    Derivatives of the n-th kernel row with respect to h_n.

    Args:
        spec: Top-network kernel description
        H: N x d activations
        n: Row index

    Returns:
        N x d array whose row m is dK_{nm}/dh_n. Row n is the derivative of
        the self-covariance K(h_n, h_n), where h_n enters both arguments.
    """
    H = _as_matrix(H)
    N, d = H.shape
    if not 0 <= n < N:
        raise IndexError(f"row {n} out of range for {N} points")
    s, c0, _ = _base(spec, H[n : n + 1], H)
    s_all = spec.sigma_w2 * np.einsum("ij,ij->i", H, H) / d + spec.sigma_b2
    prop = _propagate(spec, s, c0, s_all, track=True)

    row_coef = prop.d_row_self[0] * 2.0 * spec.sigma_w2 / d
    cross_coef = prop.d_cross[0] * spec.sigma_w2 / d
    jac = row_coef[:, None] * H[n][None, :] + cross_coef[:, None] * H
    jac[n] = prop.d_self_rows[0] * 2.0 * spec.sigma_w2 / d * H[n]
    return jac


def kernel_matrix_vjp(spec: KernelSpec, H: Activations, G: np.ndarray) -> np.ndarray:
    """
    Contract an upstream gradient with the kernel-matrix Jacobian.

    Args:
        spec: Top-network kernel description
        H: N x d activations
        G: N x N array of dL/dK_{nm}, entries treated as independent

    Returns:
        N x d gradient dL/dH
    """
    H = _as_matrix(H)
    N, d = H.shape
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (N, N):
        raise ShapeError(f"upstream gradient must be {N} x {N}, got {G.shape}")
    s, c0, _ = _base(spec, H, H)
    prop = _propagate(spec, s, c0, s, track=True)

    G_off = G + G.T
    np.fill_diagonal(G_off, 0.0)
    self_coef = (G_off * prop.d_row_self).sum(axis=1) + np.diag(G) * prop.d_self_rows
    return (2.0 * spec.sigma_w2 / d) * self_coef[:, None] * H + (spec.sigma_w2 / d) * (G_off * prop.d_cross) @ H
