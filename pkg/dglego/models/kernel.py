"""Models describing top-network covariance functions."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

ArrayOrFloat = Union[np.ndarray, float]


class Activation(str, Enum):
    """Activation of the layers in a top-network."""

    RELU = "relu"
    ERF = "erf"
    LINEAR = "linear"


class KernelSpec(BaseModel):
    """Declarative description of a fully-connected top-network kernel."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(
        default=0,
        ge=0,
        description="Activated layers above the trainee layer, excluding the linear readout",
    )
    activation: Activation = Field(default=Activation.RELU, description="Top-network activation")
    sigma_w2: float = Field(default=2.0, gt=0.0, description="Weight-prior variance per fan-in")
    sigma_b2: float = Field(default=0.0, ge=0.0, description="Bias-prior variance")
    jitter: Optional[float] = Field(
        default=None,
        ge=0.0,
        description="Regulator sigma^2 added to the kernel diagonal; None selects 1e-4 trace(K)/N",
    )

    def with_params(self, **updates) -> "KernelSpec":
        """Return a copy with some fields replaced (validated)."""
        return KernelSpec.model_validate({**self.model_dump(), **updates})

    def describe(self) -> str:
        """Short human-readable label used in logs and tables."""
        jitter = "auto" if self.jitter is None else f"{self.jitter:g}"
        return (
            f"{self.activation.value}/depth={self.depth} "
            f"sw2={self.sigma_w2:g} sb2={self.sigma_b2:g} jitter={jitter}"
        )


@dataclass(frozen=True)
class KernelStep:
    """One recursion step of the covariance and its partial derivatives.

    All fields broadcast together: scalars for a single pair, arrays for a
    whole kernel matrix.
    """

    value: ArrayOrFloat
    d_aa: ArrayOrFloat
    d_ab: ArrayOrFloat
    d_bb: ArrayOrFloat
