"""
Fully-connected networks with exact backpropagation.

A LayerStack is L activated layers of width d followed by a linear classifier
of width C. Layer l maps rows as h^{l+1} = phi(h^l W_l^T + b_l).
"""
import copy
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import erf, log_softmax

from dglego.exceptions import ShapeError
from dglego.gp.dgl_loss import DglValue, dgl_value_and_grad
from dglego.models.data import LabeledActivations
from dglego.models.kernel import KernelSpec

logger = logging.getLogger(__name__)

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


class LayerActivation(str, Enum):
    """Activation applied after a layer's affine map."""

    RELU = "relu"
    ERF = "erf"
    IDENTITY = "identity"


def activate(kind: LayerActivation, u: np.ndarray) -> np.ndarray:
    if kind is LayerActivation.RELU:
        return np.maximum(u, 0.0)
    if kind is LayerActivation.ERF:
        return erf(u)
    return u


def activate_grad(kind: LayerActivation, u: np.ndarray) -> np.ndarray:
    """Elementwise derivative phi'(u)."""
    if kind is LayerActivation.RELU:
        return (u > 0.0).astype(u.dtype)
    if kind is LayerActivation.ERF:
        return _TWO_OVER_SQRT_PI * np.exp(-u * u)
    return np.ones_like(u)


@dataclass
class Layer:
    """One affine map plus activation."""

    weights: np.ndarray  # d_out x d_in
    bias: np.ndarray  # d_out
    activation: LayerActivation = LayerActivation.RELU
    frozen: bool = False

    @property
    def d_in(self) -> int:
        return int(self.weights.shape[1])

    @property
    def d_out(self) -> int:
        return int(self.weights.shape[0])

    def checksum(self) -> str:
        """sha256 over the raw parameter bytes."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.bias, dtype="<f8").tobytes())
        return digest.hexdigest()


@dataclass
class LayerStack:
    """Ordered layers; the last one is the linear classifier."""

    layers: List[Layer] = field(default_factory=list)

    def __post_init__(self):
        for below, above in zip(self.layers, self.layers[1:]):
            if below.d_out != above.d_in:
                raise ShapeError(f"layer widths do not conform: {below.d_out} -> {above.d_in}")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def depth(self) -> int:
        """Number of activated layers (the classifier excluded)."""
        return len(self.layers) - 1

    @property
    def classifier(self) -> Layer:
        return self.layers[-1]

    def copy(self) -> "LayerStack":
        return copy.deepcopy(self)

    def freeze(self, index: int) -> None:
        self.layers[index].frozen = True

    def freeze_all_but_classifier(self) -> None:
        for layer in self.layers[:-1]:
            layer.frozen = True

    def checksums(self) -> List[str]:
        return [layer.checksum() for layer in self.layers]


@dataclass
class LayerGrad:
    """Gradient of one layer's parameters (None for layers not differentiated)."""

    weights: np.ndarray
    bias: np.ndarray


@dataclass
class ForwardTrace:
    """
    Every intermediate quantity of a forward pass.

    Attributes:
        activations: activations[0] is the input, activations[l + 1] the
            output of layer l; the last entry is the network output z
        preactivations: preactivations[l] is the affine output of layer l
    """

    activations: List[np.ndarray]
    preactivations: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def build_stack(
    in_dim: int,
    width: int,
    depth: int,
    n_classes: int,
    activation: LayerActivation = LayerActivation.RELU,
    sigma_w2: float = 2.0,
    sigma_b2: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> LayerStack:
    """
    Randomly initialized stack drawn from the NNGP prior.

    Weights ~ N(0, sigma_w2 / fan_in), biases ~ N(0, sigma_b2).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [in_dim] + [width] * depth + [n_classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        kind = activation if i < depth else LayerActivation.IDENTITY
        layers.append(
            Layer(
                weights=rng.normal(0.0, np.sqrt(sigma_w2 / d_in), size=(d_out, d_in)),
                bias=rng.normal(0.0, np.sqrt(sigma_b2), size=d_out) if sigma_b2 > 0 else np.zeros(d_out),
                activation=LayerActivation(kind),
            )
        )
    return LayerStack(layers)


def forward(stack: LayerStack, X: np.ndarray, upto: Optional[int] = None) -> ForwardTrace:
    """
    Run the stack on a batch.

    Args:
        stack: The network
        X: B x d_in inputs
        upto: Stop after this many layers (None runs all)

    Returns:
        ForwardTrace
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stack.layers[0].d_in:
        raise ShapeError(f"input must be B x {stack.layers[0].d_in}, got {X.shape}")
    activations = [X]
    preactivations = []
    h = X
    for layer in stack.layers[: upto if upto is not None else len(stack)]:
        u = h @ layer.weights.T + layer.bias
        h = activate(layer.activation, u)
        preactivations.append(u)
        activations.append(h)
    return ForwardTrace(activations=activations, preactivations=preactivations)


def representation(stack: LayerStack, X: np.ndarray, layer: int) -> np.ndarray:
    """Output h^layer of activated layer ``layer``."""
    return forward(stack, X, upto=layer + 1).activations[-1]


def _backprop(stack: LayerStack, trace: ForwardTrace, delta_out: np.ndarray) -> List[LayerGrad]:
    """Propagate dLoss/dz through all layers."""
    grads: List[Optional[LayerGrad]] = [None] * len(stack)
    delta = delta_out
    for i in range(len(stack) - 1, -1, -1):
        layer = stack.layers[i]
        delta_u = delta * activate_grad(layer.activation, trace.preactivations[i])
        grads[i] = LayerGrad(weights=delta_u.T @ trace.activations[i], bias=delta_u.sum(axis=0))
        delta = delta_u @ layer.weights
    return grads


def mse_loss(output: np.ndarray, targets: np.ndarray) -> float:
    """sum_n |z_n - l_n|^2."""
    diff = output - targets
    return float(np.sum(diff * diff))


def backward_mse(
    stack: LayerStack, X: np.ndarray, targets: np.ndarray, reduction: str = "sum"
) -> Tuple[float, List[LayerGrad]]:
    """
    Loss and exact gradients of sum_n |z(x_n) - l_n|^2.

    Args:
        stack: The network
        X: B x d_in inputs
        targets: B x C targets
        reduction: ``"sum"`` or ``"mean"`` (divides loss and gradients by B)

    Returns:
        (loss, per-layer gradients)
    """
    trace = forward(stack, X)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != trace.output.shape:
        raise ShapeError(f"targets must have shape {trace.output.shape}, got {targets.shape}")
    scale = 1.0 / X.shape[0] if reduction == "mean" else 1.0
    loss = mse_loss(trace.output, targets) * scale
    grads = _backprop(stack, trace, 2.0 * (trace.output - targets) * scale)
    return loss, grads


def backward_nll(
    stack: LayerStack, X: np.ndarray, labels: np.ndarray, reduction: str = "sum"
) -> Tuple[float, List[LayerGrad]]:
    """Softmax cross-entropy of the classifier output and its gradients."""
    trace = forward(stack, X)
    labels = np.asarray(labels, dtype=np.int64)
    log_p = log_softmax(trace.output, axis=1)
    scale = 1.0 / X.shape[0] if reduction == "mean" else 1.0
    loss = -float(np.sum(log_p[np.arange(labels.shape[0]), labels])) * scale
    delta = np.exp(log_p)
    delta[np.arange(labels.shape[0]), labels] -= 1.0
    return loss, _backprop(stack, trace, delta * scale)


def backward_dgl(
    stack: LayerStack,
    trainee_index: int,
    X: np.ndarray,
    data: LabeledActivations,
    spec: KernelSpec,
    include_variance: bool = False,
    indices: Optional[np.ndarray] = None,
) -> Tuple[DglValue, List[Optional[LayerGrad]]]:
    """
    DGL of the trainee layer's output and the gradient of its parameters.

    Layers below ``trainee_index`` act as fixed feature maps; layers above it
    are replaced by the covariance function ``spec``.

    Args:
        stack: The network
        trainee_index: Index of the activated layer being trained
        X: N x d_in network inputs
        data: Targets and labels aligned with X (its activations are ignored)
        spec: Top-network kernel above the trainee layer
        include_variance: Add the leave-one-out variance term
        indices: Optional DGL minibatch rows

    Returns:
        (DglValue, gradients) where only entry ``trainee_index`` is not None
    """
    if not 0 <= trainee_index < stack.depth:
        raise IndexError(f"trainee layer {trainee_index} is not an activated layer")
    if indices is not None:
        X = np.asarray(X)[indices]
        data = data.subset(indices)
    layer = stack.layers[trainee_index]
    inputs = forward(stack, X, upto=trainee_index).activations[-1]
    u = inputs @ layer.weights.T + layer.bias
    h = activate(layer.activation, u)
    value, grad_h = dgl_value_and_grad(spec, data.with_activations(h), include_variance)
    delta_u = grad_h * activate_grad(layer.activation, u)
    grads: List[Optional[LayerGrad]] = [None] * len(stack)
    grads[trainee_index] = LayerGrad(weights=delta_u.T @ inputs, bias=delta_u.sum(axis=0))
    return value, grads


def predict_labels(stack: LayerStack, X: np.ndarray) -> np.ndarray:
    """Arg-max class of the classifier output."""
    return np.argmax(forward(stack, X).output, axis=1)
