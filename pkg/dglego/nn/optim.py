"""
Parameter-update rules: SGD, Adam and overdamped Langevin dynamics.

Langevin dynamics (Euler-Maruyama, zero momentum mass) updates every
parameter tensor w with prior variance v as

    w <- w - lr (g + wd w + 2 T w / v) + sqrt(2 lr T) xi,   xi ~ N(0, 1)

whose stationary law is proportional to exp(-L / T - sum w^2 / v). For weights
v = sigma_w2 / fan_in; for biases v = sigma_b2, and at T > 0 biases with
sigma_b2 = 0 stay where they are.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from dglego.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from dglego.exceptions import DivergenceError, ShapeError
from dglego.models.experiment import OptimizerConfig, OptimizerKind
from dglego.nn.layers import LayerGrad, LayerStack

logger = logging.getLogger(__name__)

_Key = Tuple[int, str]


@dataclass
class OptimizerState:
    """Mutable state of an optimizer: moments, step counter and noise RNG."""

    settings: OptimizerConfig
    seed: int = 0
    steps: int = 0
    first_moment: Dict[_Key, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[_Key, np.ndarray] = field(default_factory=dict)
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)


class Optimizer:
    """
    Applies one update rule to a LayerStack in place.

    Frozen layers and layers whose gradient is None are skipped entirely.
    """

    def __init__(self, settings: OptimizerConfig, seed: int = 0):
        self.state = OptimizerState(settings=settings, seed=seed)

    @property
    def settings(self) -> OptimizerConfig:
        return self.state.settings

    def step(self, stack: LayerStack, grads: List[Optional[LayerGrad]]) -> LayerStack:
        """
        Update every trainable layer that has a gradient.

        Raises:
            ShapeError: If the gradient list does not conform to the stack
            DivergenceError: If a gradient is not finite
        """
        if len(grads) != len(stack):
            raise ShapeError(f"{len(grads)} gradients for {len(stack)} layers")
        self.state.steps += 1
        for i, (layer, grad) in enumerate(zip(stack.layers, grads)):
            if layer.frozen or grad is None:
                continue
            if grad.weights.shape != layer.weights.shape or grad.bias.shape != layer.bias.shape:
                raise ShapeError(f"gradient of layer {i} does not match its parameters")
            if not (np.all(np.isfinite(grad.weights)) and np.all(np.isfinite(grad.bias))):
                raise DivergenceError(f"non-finite gradient in layer {i} at step {self.state.steps}")
            weight_var = self.settings.sigma_w2 / layer.d_in
            layer.weights = self._update((i, "weights"), layer.weights, grad.weights, weight_var)
            if self._bias_pinned():
                continue
            layer.bias = self._update((i, "bias"), layer.bias, grad.bias, self.settings.sigma_b2)
        return stack

    def _bias_pinned(self) -> bool:
        s = self.settings
        return s.kind is OptimizerKind.LANGEVIN and s.temperature > 0.0 and s.sigma_b2 == 0.0

    def _update(self, key: _Key, w: np.ndarray, g: np.ndarray, prior_var: float) -> np.ndarray:
        s = self.settings
        if s.kind is OptimizerKind.SGD:
            return w - s.lr * (g + s.wd * w)
        if s.kind is OptimizerKind.ADAM:
            return self._adam(key, w, g)
        drift = g + s.wd * w
        if s.temperature > 0.0:
            drift = drift + 2.0 * s.temperature * w / prior_var
            noise = np.sqrt(2.0 * s.lr * s.temperature) * self.state.rng.standard_normal(w.shape)
            return w - s.lr * drift + noise
        return w - s.lr * drift

    def _adam(self, key: _Key, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        s = self.settings
        m = self.state.first_moment.get(key, np.zeros_like(w))
        v = self.state.second_moment.get(key, np.zeros_like(w))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        self.state.first_moment[key] = m
        self.state.second_moment[key] = v
        t = self.state.steps
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        return w - s.lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + s.wd * w)


def langevin_stationary_variance(curvature: float, temperature: float, lr: float) -> float:
    """
    Exact stationary variance of the discretized Langevin chain on a quadratic.

    For U(w) = curvature w^2 / 2 the chain is an AR(1) process with variance
    2 T / (c (2 - lr c)); it tends to the Boltzmann value T / c as lr -> 0.
    """
    if not 0.0 < lr * curvature < 2.0:
        raise ValueError("the chain is unstable unless 0 < lr * curvature < 2")
    return 2.0 * temperature / (curvature * (2.0 - lr * curvature))
