"""
Information-Bottleneck estimates under a small Gaussian regulator.

With noise eps ~ N(0, sigma_eps^2 I) added to the activations and close
triples rare, mutual-information quantities reduce to pairwise sums of

    Delta S(r) = H(r; sigma_eps) - H(inf; sigma_eps) <= 0

where H(r; sigma_eps) is the entropy of an equal mixture of two isotropic
d-dimensional Gaussians at separation r:

    I(T+eps : X) = ln N + (N - 1) int dr PDF_all(r) Delta S(r)
    I(T+eps : Y) = ln N + (N / 2) int dr PDF_+-(r) Delta S(r)
    L_IB,beta   = sum_{n != m} [beta (1 - l_n l_m) - 1] Delta S(|h_n - h_m|)

with binary labels encoded as l = +-1. Minimizing L_IB,beta rewards
separating opposite-label pairs (their bracket is 2 beta - 1 > 0 while
Delta S < 0) and collapsing same-label pairs (bracket -1).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import trapezoid
from scipy.spatial.distance import pdist, squareform
from scipy.special import logsumexp

from dglego.config import CLOSE_TRIPLE_RADIUS, DEFAULT_QUADRATURE_NODES, QUADRATURE_HALF_WIDTH
from dglego.exceptions import LabelError, ShapeError
from dglego.models.data import LabeledActivations

logger = logging.getLogger(__name__)

LN2 = float(np.log(2.0))


class MixtureEntropySpec(BaseModel):
    """Regulator and quadrature settings for the two-Gaussian mixture entropy."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dim: int = Field(..., ge=1, description="Dimension d of the activation space")
    sigma_eps: float = Field(..., gt=0.0, description="Regulator noise scale")
    nodes: int = Field(default=DEFAULT_QUADRATURE_NODES, ge=16, description="Quadrature nodes")


class Population(str, Enum):
    """Which pairs enter a pair-distribution function."""

    ALL_PAIRS = "all_pairs"
    OPPOSITE_LABEL = "opposite_label"


@dataclass(frozen=True)
class PairDistribution:
    """
    Pair-distribution function of a representation.

    The exact delta-function PDF is kept as (distances, weights); the
    histogram (edges, mass) is derived from it.
    """

    edges: np.ndarray
    mass: np.ndarray
    population: Population
    distances: np.ndarray
    weights: np.ndarray

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """int dr PDF(r) fn(r), evaluated exactly on the delta-function PDF."""
        return float(np.sum(self.weights * fn(self.distances)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "population": self.population.value,
                "bin_left": self.edges[:-1],
                "bin_right": self.edges[1:],
                "mass": self.mass,
            }
        )

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def gaussian_entropy(dim: int, sigma_eps: float) -> float:
    """(d/2) ln(2 pi e sigma^2)."""
    return 0.5 * dim * float(np.log(2.0 * np.pi * np.e * sigma_eps**2))


def mixture_entropy(spec: MixtureEntropySpec, delta: float) -> float:
    """
    Entropy of 0.5 N(0, s^2 I) + 0.5 N(delta e_1, s^2 I) in d dimensions.

    The d-1 directions orthogonal to the separation contribute the Gaussian
    entropy additively; the separation axis is integrated by the trapezoid
    rule over the half line left of the midpoint (the density is symmetric),
    restricted to where the integrand is not negligible.
    """
    if delta < 0 or not np.isfinite(delta):
        raise ShapeError(f"delta must be a finite non-negative distance, got {delta}")
    s = spec.sigma_eps
    orthogonal = gaussian_entropy(spec.dim - 1, s) if spec.dim > 1 else 0.0
    half = 0.5 * delta
    lo = -half - QUADRATURE_HALF_WIDTH * s
    hi = min(0.0, -half + QUADRATURE_HALF_WIDTH * s)
    x = np.linspace(lo, hi, spec.nodes)
    log_norm = -0.5 * np.log(2.0 * np.pi * s * s)
    log_p = logsumexp(
        np.stack([-((x + half) ** 2), -((x - half) ** 2)]) / (2.0 * s * s),
        axis=0,
    ) + log_norm + np.log(0.5)
    along_axis = -2.0 * trapezoid(np.exp(log_p) * log_p, x)
    return orthogonal + along_axis


def entropy_gap(spec: MixtureEntropySpec, r: Union[float, np.ndarray]) -> np.ndarray:
    """Delta S(r) = H(r) - H(inf), vectorized over r."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    h_inf = gaussian_entropy(spec.dim, spec.sigma_eps) + LN2
    # beyond 2 * QUADRATURE_HALF_WIDTH sigma the gap is below exp(-50)
    far = r >= 2.0 * QUADRATURE_HALF_WIDTH * spec.sigma_eps
    out = np.zeros_like(r)
    unique, inverse = np.unique(np.round(r[~far], 14), return_inverse=True)
    values = np.array([mixture_entropy(spec, float(u)) - h_inf for u in unique])
    if values.size:
        out[~far] = values[inverse]
    return out


def binary_signs(labels: Sequence[int]) -> np.ndarray:
    """Map two label ids to +1 (smaller id) and -1 (larger id)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size != 2:
        raise LabelError(f"binary labels required, found {classes.size} classes")
    return np.where(labels == classes[0], 1.0, -1.0)


def pdf(
    data: LabeledActivations,
    population: Population = Population.ALL_PAIRS,
    bins: Union[int, Sequence[float]] = 50,
) -> PairDistribution:
    """
    Pair-distribution function of pairwise distances |h_n - h_m|.

    Args:
        data: Representation and labels
        population: All ordered pairs n != m (weight 1/(N(N-1))) or unordered
            opposite-label pairs (weight 1/(N+ N-), i.e. 4/N^2 when balanced)
        bins: Number of bins or explicit increasing edges

    Returns:
        PairDistribution whose masses sum to 1
    """
    if data.n < 2:
        raise ShapeError("a pair distribution needs at least two points")
    D = squareform(pdist(data.H))
    population = Population(population)
    if population is Population.ALL_PAIRS:
        mask = ~np.eye(data.n, dtype=bool)
    else:
        signs = binary_signs(data.labels)
        mask = np.outer(signs > 0, signs < 0)
    distances = D[mask]
    if distances.size == 0:
        raise ShapeError(f"empty pair population {population.value}")
    weights = np.full(distances.shape, 1.0 / distances.size)
    if np.isscalar(bins):
        top = float(distances.max())
        edges = np.linspace(0.0, top if top > 0 else 1.0, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    mass, _ = np.histogram(distances, bins=edges, weights=weights)
    return PairDistribution(edges=edges, mass=mass, population=population, distances=distances, weights=weights)


def close_triple_count(data: LabeledActivations, spec: MixtureEntropySpec) -> int:
    """Number of triples whose mutual distances are all below 3 sigma_eps."""
    D = squareform(pdist(data.H))
    A = (D < CLOSE_TRIPLE_RADIUS * spec.sigma_eps).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    return int(round(np.trace(A @ A @ A) / 6.0))


def _warn_triples(data: LabeledActivations, spec: MixtureEntropySpec) -> None:
    count = close_triple_count(data, spec)
    if count:
        logger.warning(
            f"{count} triples lie within {CLOSE_TRIPLE_RADIUS:g} sigma_eps of each other; "
            "the pairwise estimate is outside its validity regime"
        )


def mutual_info_input(data: LabeledActivations, spec: MixtureEntropySpec) -> float:
    """Estimate of I(T+eps : X) from the all-pairs PDF."""
    _warn_triples(data, spec)
    dist = pdf(data, Population.ALL_PAIRS)
    return float(np.log(data.n)) + (data.n - 1) * dist.integrate(lambda r: entropy_gap(spec, r))


def mutual_info_label(data: LabeledActivations, spec: MixtureEntropySpec) -> float:
    """Estimate of I(T+eps : Y) from the opposite-label PDF (binary labels)."""
    _warn_triples(data, spec)
    dist = pdf(data, Population.OPPOSITE_LABEL)
    return float(np.log(data.n)) + 0.5 * data.n * dist.integrate(lambda r: entropy_gap(spec, r))


def ib_loss(data: LabeledActivations, spec: MixtureEntropySpec, beta: float) -> float:
    """
    Pairwise IB loss sum_{n != m} [beta (1 - l_n l_m) - 1] Delta S(|h_n - h_m|).

    Labels are the ±1 encoding of ``binary_signs``.
    """
    signs = binary_signs(data.labels)
    D = squareform(pdist(data.H))
    iu = np.triu_indices(data.n, k=1)
    gaps = entropy_gap(spec, D[iu])
    brackets = beta * (1.0 - signs[iu[0]] * signs[iu[1]]) - 1.0
    return float(2.0 * np.sum(brackets * gaps))
