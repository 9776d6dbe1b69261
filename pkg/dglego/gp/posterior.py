"""
Gaussian-Process posterior algebra.

Everything here reads from B = (K + sigma^2 I)^{-1}. Leave-one-out quantities
use the positive-definite minor-inverse identity

    [Q_n^{-1}]_{pq} = [Q^{-1}]_{pq} - [Q^{-1}]_{pn} [Q^{-1}]_{nq} / [Q^{-1}]_{nn}

so no (N-1) x (N-1) system is ever formed.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from dglego.config import DEFAULT_RELATIVE_JITTER, JITTER_ESCALATION_FACTOR, MAX_JITTER_ATTEMPTS
from dglego.exceptions import FactorizationError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorInverse:
    """
    The regularized inverse B = (K + sigma2 I)^{-1} and its factorization.

    Attributes:
        B: Symmetric positive-definite N x N matrix
        sigma2: Effective regulator used (after any escalation)
        chol: Lower Cholesky factor of K + sigma2 I as returned by scipy.linalg.cho_factor
        n: Dataset size N
    """

    B: np.ndarray
    sigma2: float
    chol: Tuple[np.ndarray, bool]
    n: int

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.B)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(K + sigma2 I)^{-1} rhs via the stored factor."""
        return linalg.cho_solve(self.chol, rhs)


def default_jitter(K: np.ndarray) -> float:
    """Relative jitter 1e-4 * trace(K) / N."""
    K = np.asarray(K)
    return float(DEFAULT_RELATIVE_JITTER * np.trace(K) / K.shape[0])


def _factor(K: np.ndarray, sigma2: float):
    A = K + sigma2 * np.eye(K.shape[0])
    return linalg.cho_factor(A, lower=True, check_finite=True)


def posterior_inverse(K: np.ndarray, sigma2: Optional[float] = 0.0, escalate: bool = True) -> PosteriorInverse:
    """
    Factorize K + sigma2 I and materialize its inverse.

    Args:
        K: Symmetric N x N covariance matrix
        sigma2: Regulator; None selects ``default_jitter(K)``
        escalate: On factorization failure retry with a growing jitter

    Returns:
        PosteriorInverse

    Raises:
        FactorizationError: If K + sigma2 I is not positive definite and
            escalation is disabled or exhausted
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"kernel matrix must be square, got {K.shape}")
    N = K.shape[0]
    sigma2 = default_jitter(K) if sigma2 is None else float(sigma2)
    if sigma2 < 0:
        raise ShapeError("sigma2 must be non-negative")

    attempt = 0
    while True:
        try:
            chol = _factor(K, sigma2)
            break
        except (linalg.LinAlgError, ValueError) as e:
            attempt += 1
            if not escalate or attempt >= MAX_JITTER_ATTEMPTS:
                raise FactorizationError(
                    f"K + sigma2 I is not positive definite (sigma2={sigma2:g}, N={N}); "
                    f"raise the jitter: {e}"
                ) from e
            previous = sigma2
            if sigma2 == 0.0:
                sigma2 = default_jitter(K)
                if sigma2 <= 0.0:
                    sigma2 = DEFAULT_RELATIVE_JITTER
            else:
                sigma2 *= JITTER_ESCALATION_FACTOR
            logger.warning(f"Cholesky failed at sigma2={previous:g}; retrying with sigma2={sigma2:g}")

    B = linalg.cho_solve(chol, np.eye(N))
    B = 0.5 * (B + B.T)
    return PosteriorInverse(B=B, sigma2=sigma2, chol=chol, n=N)


def minor_inverse(post: PosteriorInverse, n: int, padded: bool = False) -> np.ndarray:
    """
    Inverse of the (n, n)-minor of K + sigma2 I, read off B.

    Args:
        post: The full posterior inverse
        n: Index removed
        padded: Return the N x N form with row and column n zeroed instead of
            the (N-1) x (N-1) matrix

    Returns:
        The minor inverse. In the compact form rows/columns correspond to the
        original indices ``np.delete(np.arange(N), n)`` in order.
    """
    if not 0 <= n < post.n:
        raise IndexError(f"index {n} out of range for N={post.n}")
    B = post.B
    full = B - np.outer(B[:, n], B[n, :]) / B[n, n]
    full[n, :] = 0.0
    full[:, n] = 0.0
    if padded:
        return full
    keep = np.delete(np.arange(post.n), n)
    return full[np.ix_(keep, keep)]


def _targets(post: PosteriorInverse, L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    if L.shape[0] != post.n:
        raise ShapeError(f"targets have {L.shape[0]} rows, expected {post.n}")
    return L


def loo_predict(post: PosteriorInverse, L: np.ndarray, n: int, method: str = "compact") -> np.ndarray:
    """
    Bayesian prediction of target n from all other points.

    Args:
        post: Posterior inverse of the full dataset
        L: N x C targets
        n: Left-out index
        method: ``"compact"`` uses l_n - (B L)_n / B_nn; ``"expansion"`` sums
            the row [K {B(D_n)}^n]_{n.} term by term:
            delta_nq - sigma2 B_nq - B_nq / B_nn + sigma2 B_nn B_nq / B_nn

    Returns:
        Predicted target vector of length C
    """
    L = _targets(post, L)
    if not 0 <= n < post.n:
        raise IndexError(f"index {n} out of range for N={post.n}")
    B = post.B
    if method == "compact":
        return L[n] - (B[n] @ L) / B[n, n]
    if method == "expansion":
        s2 = post.sigma2
        row = -s2 * B[n] - B[n] / B[n, n] + s2 * B[n, n] * B[n] / B[n, n]
        row[n] += 1.0
        return row @ L
    raise ValueError(f"unknown method {method!r}")


def loo_predict_all(post: PosteriorInverse, L: np.ndarray) -> np.ndarray:
    """All N leave-one-out predictions as an N x C matrix."""
    L = _targets(post, L)
    return L - (post.B @ L) / post.diag[:, None]


def loo_variance(post: PosteriorInverse, n: int) -> float:
    """Leave-one-out predictive variance 1/B_nn - sigma2 (clamped at 0)."""
    return float(max(1.0 / post.B[n, n] - post.sigma2, 0.0))


def loo_variance_all(post: PosteriorInverse) -> np.ndarray:
    return np.maximum(1.0 / post.diag - post.sigma2, 0.0)


def gp_predict(post: PosteriorInverse, L: np.ndarray, k_star: np.ndarray) -> np.ndarray:
    """
    GP posterior mean k_star^T B L.

    Args:
        post: Posterior inverse of the training set
        L: N x C training targets
        k_star: Length-N vector of K(x*, x_n), or an M x N matrix for M test points

    Returns:
        Predicted target(s): length C, or M x C
    """
    L = _targets(post, L)
    k = np.asarray(k_star, dtype=np.float64)
    if k.shape[-1] != post.n:
        raise ShapeError(f"k_star has {k.shape[-1]} entries, expected {post.n}")
    return k @ (post.B @ L)
