"""
Brute-force cross-checks of the analytic machinery.

Every check returns an OracleResult with the observed error and the bound it
is held to. ``run_oracle_suite`` runs them all; ``quick=True`` shrinks the
problem sizes for smoke runs.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from dglego.gp.dgl_loss import (
    dgl,
    dgl_from_kernel,
    dgl_grad,
    kernel_projector,
    linear_dgl,
    linear_dgl_grad,
)
from dglego.gp.ib_loss import (
    MixtureEntropySpec,
    binary_signs,
    entropy_gap,
    gaussian_entropy,
    mixture_entropy,
    mutual_info_input,
    mutual_info_label,
)
from dglego.gp.kernels import kernel_cross, kernel_matrix, kernel_value
from dglego.gp.posterior import (
    gp_predict,
    loo_predict,
    loo_predict_all,
    loo_variance_all,
    minor_inverse,
    posterior_inverse,
)
from dglego.models.data import LabeledActivations
from dglego.models.experiment import OptimizerConfig, OptimizerKind
from dglego.models.kernel import Activation, KernelSpec
from dglego.nn.layers import (
    Layer,
    LayerActivation,
    LayerStack,
    activate,
    backward_dgl,
    backward_mse,
    build_stack,
    forward,
)
from dglego.nn.optim import Optimizer

logger = logging.getLogger(__name__)

_LAYER_KIND = {
    Activation.RELU: LayerActivation.RELU,
    Activation.ERF: LayerActivation.ERF,
    Activation.LINEAR: LayerActivation.IDENTITY,
}


@dataclass
class OracleResult:
    """Outcome of one brute-force comparison."""

    name: str
    error: float
    tolerance: float
    passed: bool
    detail: str = ""


def _result(name: str, error: float, tolerance: float, detail: str = "") -> OracleResult:
    passed = bool(np.isfinite(error) and error <= tolerance)
    log = logger.info if passed else logger.error
    log(f"{name}: error {error:.3e} (tolerance {tolerance:.1e}) {'ok' if passed else 'FAILED'}")
    return OracleResult(name=name, error=float(error), tolerance=tolerance, passed=passed, detail=detail)


def finite_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        original = x[idx]
        x[idx] = original + step
        up = fn(x)
        x[idx] = original - step
        down = fn(x)
        x[idx] = original
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(np.asarray(analytic) - np.asarray(numeric)) / scale)


def _random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T / n + np.eye(n)


def _random_labels(rng: np.random.Generator, n: int, n_classes: int = 2) -> np.ndarray:
    return rng.permutation(np.arange(n) % n_classes)


def check_minor_inverse(rng: np.random.Generator, trials: int = 200, n_min: int = 5, n_max: int = 64) -> OracleResult:
    """Minor-inverse identity against direct inversion of every minor."""
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(n_min, n_max + 1))
        K = _random_spd(rng, n)
        post = posterior_inverse(K, 0.0, escalate=False)
        for i in range(n):
            minor = np.delete(np.delete(K, i, axis=0), i, axis=1)
            worst = max(worst, float(np.max(np.abs(minor_inverse(post, i) - np.linalg.inv(minor)))))
    return _result("minor_inverse", worst, 1e-8, f"{trials} matrices, N in [{n_min}, {n_max}]")


LOO_SPECS = (
    KernelSpec(depth=1, activation=Activation.RELU, sigma_w2=2.0, sigma_b2=0.1),
    KernelSpec(depth=2, activation=Activation.RELU, sigma_w2=1.5, sigma_b2=0.05),
    KernelSpec(depth=1, activation=Activation.ERF, sigma_w2=1.0, sigma_b2=0.1),
)


def check_loo(
    rng: np.random.Generator,
    n: int = 30,
    dim: int = 8,
    sigma2_values: Sequence[float] = (1e-6, 1e-3, 1e-1),
    specs: Sequence[KernelSpec] = LOO_SPECS,
) -> OracleResult:
    """Leave-one-out mean and variance against deleting the point and inverting."""
    H = rng.standard_normal((n, dim))
    L = rng.standard_normal((n, 2))
    worst = 0.0
    for spec in specs:
        K = kernel_matrix(spec, H)
        for sigma2 in sigma2_values:
            post = posterior_inverse(K, sigma2, escalate=False)
            preds = loo_predict_all(post, L)
            variances = loo_variance_all(post)
            for i in range(n):
                keep = np.delete(np.arange(n), i)
                A = K[np.ix_(keep, keep)] + sigma2 * np.eye(n - 1)
                k = K[i, keep]
                weights = np.linalg.solve(A, k)
                scale = max(1.0, float(np.max(np.abs(weights @ L[keep]))))
                worst = max(
                    worst,
                    float(np.max(np.abs(preds[i] - weights @ L[keep]))) / scale,
                    float(np.max(np.abs(loo_predict(post, L, i, method="expansion") - weights @ L[keep]))) / scale,
                    abs(variances[i] - max(K[i, i] - k @ weights, 0.0)) / max(1.0, K[i, i]),
                )
    return _result("loo_equivalence", worst, 1e-8, f"N={n}, {len(specs)} specs, sigma2 in {list(sigma2_values)}")


def check_dgl_similarity(rng: np.random.Generator, n: int = 20, dim: int = 40, instances: int = 5) -> OracleResult:
    """DGL via leave-one-out predictions against the similarity-matrix contraction."""
    worst = 0.0
    spec = KernelSpec(depth=1, activation=Activation.ERF, sigma_w2=1.5, sigma_b2=0.1)
    for _ in range(instances):
        data = LabeledActivations.from_labels(rng.standard_normal((n, dim)), _random_labels(rng, n, 3))
        value = dgl_from_kernel(kernel_matrix(spec, data.H), data.targets, 1e-8, return_similarity=True)
        contraction = -float(np.sum(data.target_gram() * value.similarity))
        worst = max(worst, abs(value.loss - contraction) / max(abs(contraction), 1.0))
    return _result("dgl_similarity", worst, 1e-10)


GRADIENT_SPECS = (
    KernelSpec(depth=1, activation=Activation.RELU, sigma_w2=2.0, sigma_b2=0.1, jitter=1e-2),
    KernelSpec(depth=2, activation=Activation.ERF, sigma_w2=1.5, sigma_b2=0.0, jitter=1e-2),
    KernelSpec(depth=0, activation=Activation.LINEAR, sigma_w2=1.0, sigma_b2=0.2, jitter=1e-2),
)


def check_dgl_grad(rng: np.random.Generator, instances: int = 20, n: int = 8, dim: int = 3) -> OracleResult:
    worst = 0.0
    for i in range(instances):
        spec = GRADIENT_SPECS[i % len(GRADIENT_SPECS)]
        include_variance = bool(i % 2)
        data = LabeledActivations.from_labels(rng.standard_normal((n, dim)), _random_labels(rng, n))
        analytic = dgl_grad(spec, data, include_variance)
        numeric = finite_difference(lambda H: dgl(spec, data.with_activations(H), include_variance).loss, data.H)
        worst = max(worst, relative_error(analytic, numeric))
    return _result("dgl_grad", worst, 1e-5, f"{instances} instances, N={n}, d={dim}")


def check_linear_dgl_grad(rng: np.random.Generator, instances: int = 20, n: int = 12, dim: int = 3) -> OracleResult:
    worst = 0.0
    for _ in range(instances):
        data = LabeledActivations.from_labels(rng.standard_normal((n, dim)), _random_labels(rng, n, 3))
        analytic = linear_dgl_grad(data, ridge=0.0)
        numeric = finite_difference(lambda H: linear_dgl(data.with_activations(H), ridge=0.0), data.H)
        worst = max(worst, relative_error(analytic, numeric))
    return _result("linear_dgl_grad", worst, 1e-5)


def _stack_params(stack: LayerStack) -> List[np.ndarray]:
    params = []
    for layer in stack.layers:
        params.extend([layer.weights, layer.bias])
    return params


def _param_fd(stack: LayerStack, loss: Callable[[LayerStack], float], index: int) -> List[np.ndarray]:
    """Finite differences of ``loss`` with respect to one layer's weights and bias."""
    layer = stack.layers[index]

    def with_weights(W):
        saved = layer.weights
        layer.weights = W
        value = loss(stack)
        layer.weights = saved
        return value

    def with_bias(b):
        saved = layer.bias
        layer.bias = b
        value = loss(stack)
        layer.bias = saved
        return value

    return [finite_difference(with_weights, layer.weights), finite_difference(with_bias, layer.bias)]


def check_backward_mse(rng: np.random.Generator, instances: int = 20) -> OracleResult:
    worst = 0.0
    for i in range(instances):
        kind = LayerActivation.ERF if i % 2 else LayerActivation.RELU
        stack = build_stack(4, 5, 2, 3, activation=kind, sigma_b2=0.1, rng=rng)
        X = rng.standard_normal((6, 4))
        targets = rng.standard_normal((6, 3))
        _, grads = backward_mse(stack, X, targets)
        for index in range(len(stack)):
            numeric = _param_fd(stack, lambda s: backward_mse(s, X, targets)[0], index)
            worst = max(
                worst,
                relative_error(grads[index].weights, numeric[0]),
                relative_error(grads[index].bias, numeric[1]),
            )
    return _result("backward_mse", worst, 1e-5)


def check_backward_dgl(rng: np.random.Generator, instances: int = 20, n: int = 8, width: int = 3) -> OracleResult:
    worst = 0.0
    for i in range(instances):
        kind = LayerActivation.ERF if i % 2 else LayerActivation.RELU
        stack = build_stack(4, width, 2, 2, activation=kind, sigma_b2=0.1, rng=rng)
        X = rng.standard_normal((n, 4))
        data = LabeledActivations.from_labels(np.zeros((n, 1)), _random_labels(rng, n))
        spec = GRADIENT_SPECS[i % len(GRADIENT_SPECS)]
        trainee = i % 2
        _, grads = backward_dgl(stack, trainee, X, data, spec)
        numeric = _param_fd(stack, lambda s: backward_dgl(s, trainee, X, data, spec)[0].loss, trainee)
        worst = max(
            worst,
            relative_error(grads[trainee].weights, numeric[0]),
            relative_error(grads[trainee].bias, numeric[1]),
        )
    return _result("backward_dgl", worst, 1e-5)


def check_projector_symmetry(rng: np.random.Generator, transforms: int = 50, n: int = 40, dim: int = 4) -> OracleResult:
    """Projector identities plus GL(d) invariance of linear_dgl and O(d) invariance of dgl."""
    H = rng.standard_normal((n, dim))
    data = LabeledActivations.from_labels(H, _random_labels(rng, n, 3))
    P = kernel_projector(H)
    errors = [
        float(np.max(np.abs(P @ P - P))),
        float(np.max(np.abs(P @ H @ H.T))),
        abs(float(np.trace(P)) - (n - dim)),
    ]
    spec = KernelSpec(depth=1, activation=Activation.RELU, sigma_w2=2.0, sigma_b2=0.1)
    base_linear = linear_dgl(data, ridge=0.0)
    base_dgl = dgl(spec, data).loss
    for _ in range(transforms):
        A = rng.standard_normal((dim, dim)) + 2.0 * np.eye(dim)
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        errors.append(abs(linear_dgl(data.with_activations(H @ A), ridge=0.0) - base_linear) / max(base_linear, 1.0))
        errors.append(abs(dgl(spec, data.with_activations(H @ Q)).loss - base_dgl) / max(base_dgl, 1.0))
    return _result("projector_symmetry", max(errors), 1e-8)


def check_linear_expansion(
    rng: np.random.Generator, sizes: Sequence[tuple] = ((200, 2), (400, 4), (800, 8))
) -> OracleResult:
    """Small-jitter linear-kernel DGL against the closed form, relative gap over d/N (bound 5)."""
    worst = 0.0
    spec = KernelSpec(depth=0, activation=Activation.LINEAR, sigma_w2=1.0, sigma_b2=0.0, jitter=1e-8)
    for n, dim in sizes:
        data = LabeledActivations.from_labels(rng.standard_normal((n, dim)), _random_labels(rng, n))
        closed = linear_dgl(data, ridge=0.0)
        gap = abs(dgl(spec, data).loss - closed) / closed
        worst = max(worst, gap / (dim / n))
    return _result("linear_dgl_expansion", worst, 5.0, f"sizes {list(sizes)}")


def _batch_means_se(series: np.ndarray, n_batches: int = 50) -> float:
    batches = np.array_split(series, n_batches)
    means = np.array([b.mean() for b in batches])
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def check_langevin_gp(
    rng: np.random.Generator,
    temperature: float,
    n: int = 16,
    dim: int = 4,
    steps: int = 200_000,
    lr: float = 5e-3,
    sigma_w2: float = 1.0,
    n_se: float = 3.0,
) -> OracleResult:
    """
    Time-averaged Langevin prediction of a linear model against the GP posterior mean.

    The chain samples exp(-L/T - sum w^2 / v) with L = sum_n (w . x_n - l_n)^2
    and v = sigma_w2 / d; its mean prediction equals gp_predict with kernel
    sigma_w2 x.x'/d and sigma^2 = T. The first half of the trajectory is
    discarded and the error is measured in batch-means standard errors.
    """
    X = rng.standard_normal((n, dim))
    targets = X @ rng.normal(0.0, np.sqrt(sigma_w2 / dim), size=(dim, 1)) + 0.1 * rng.standard_normal((n, 1))
    x_star = rng.standard_normal((1, dim))

    spec = KernelSpec(depth=0, activation=Activation.LINEAR, sigma_w2=sigma_w2, sigma_b2=0.0)
    post = posterior_inverse(kernel_matrix(spec, X), temperature, escalate=False)
    expected = float(gp_predict(post, targets, kernel_cross(spec, x_star, X))[0, 0])

    weights = rng.normal(0.0, np.sqrt(sigma_w2 / dim), size=(1, dim))
    stack = LayerStack([Layer(weights=weights, bias=np.zeros(1), activation=LayerActivation.IDENTITY)])
    settings = OptimizerConfig(kind=OptimizerKind.LANGEVIN, lr=lr, temperature=temperature, sigma_w2=sigma_w2)
    opt = Optimizer(settings, seed=int(rng.integers(2**31)))
    burn_in = steps // 2
    trace = np.empty(steps - burn_in)
    for t in range(steps):
        _, grads = backward_mse(stack, X, targets)
        opt.step(stack, grads)
        if t >= burn_in:
            trace[t - burn_in] = float(stack.layers[0].weights[0] @ x_star[0])
    average = float(trace.mean())
    se = _batch_means_se(trace)
    return _result(
        f"langevin_gp[T={temperature:g}]",
        abs(average - expected) / se,
        n_se,
        f"time average {average:.6f} vs GP {expected:.6f} (se {se:.2e})",
    )


def check_kernel_monte_carlo(
    rng: np.random.Generator,
    pairs: int = 10,
    dim: int = 5,
    width: int = 1 << 16,
    replicates: int = 32,
    depths: Sequence[int] = (1, 2),
    activations: Sequence[Activation] = (Activation.RELU, Activation.ERF),
    n_se: float = 4.0,
) -> OracleResult:
    """
    Analytic kernels against the empirical covariance of wide random networks.

    ``width`` neurons are split over independent replicate networks; the
    standard error comes from the spread of the replicate estimates.
    """
    A = rng.standard_normal((pairs, dim))
    B = rng.standard_normal((pairs, dim))
    X = np.concatenate([A, B])
    per_replicate = width // replicates
    worst = 0.0
    for activation in activations:
        kind = _LAYER_KIND[activation]
        for depth in depths:
            spec = KernelSpec(depth=depth, activation=activation, sigma_w2=1.5, sigma_b2=0.1)
            estimates = np.empty((replicates, pairs))
            for r in range(replicates):
                h, fan_in = X, dim
                for _ in range(depth):
                    W = rng.normal(0.0, np.sqrt(spec.sigma_w2 / fan_in), size=(per_replicate, fan_in))
                    b = rng.normal(0.0, np.sqrt(spec.sigma_b2), size=per_replicate)
                    h = activate(kind, h @ W.T + b)
                    fan_in = per_replicate
                products = np.einsum("ij,ij->i", h[:pairs], h[pairs:])
                estimates[r] = spec.sigma_w2 * products / per_replicate + spec.sigma_b2
            analytic = np.array([kernel_value(spec, a, b) for a, b in zip(A, B)])
            se = estimates.std(axis=0, ddof=1) / np.sqrt(replicates)
            worst = max(worst, float(np.max(np.abs(estimates.mean(axis=0) - analytic) / se)))
    return _result("kernel_monte_carlo", worst, n_se, f"{pairs} pairs, width {width}")


def check_mixture_entropy(
    rng: np.random.Generator,
    dim: int = 3,
    sigma_eps: float = 0.5,
    separations: Sequence[float] = (1.0, 2.0, 4.0),
    samples: int = 10_000_000,
    n_se: float = 3.0,
) -> OracleResult:
    """Quadrature entropy: exact endpoints and Monte-Carlo interior values."""
    spec = MixtureEntropySpec(dim=dim, sigma_eps=sigma_eps)
    h0 = mixture_entropy(spec, 0.0)
    h_far = mixture_entropy(spec, 40.0 * sigma_eps)
    endpoint_error = max(abs(h0 - gaussian_entropy(dim, sigma_eps)), abs(h_far - h0 - np.log(2.0)))
    if endpoint_error > 1e-6:
        return _result("mixture_entropy", endpoint_error, 1e-6, "endpoints")

    worst = 0.0
    chunk = 1_000_000
    for ratio in separations:
        delta = ratio * sigma_eps
        centers = np.zeros((2, dim))
        centers[1, 0] = delta
        total, total_sq, count = 0.0, 0.0, 0
        while count < samples:
            m = min(chunk, samples - count)
            x = centers[rng.integers(0, 2, size=m)] + sigma_eps * rng.standard_normal((m, dim))
            sq = np.stack([np.sum((x - c) ** 2, axis=1) for c in centers])
            log_p = (
                logsumexp(-sq / (2.0 * sigma_eps**2), axis=0)
                + np.log(0.5)
                - 0.5 * dim * np.log(2.0 * np.pi * sigma_eps**2)
            )
            total += float(np.sum(-log_p))
            total_sq += float(np.sum(log_p**2))
            count += m
        mean = total / count
        se = np.sqrt(max(total_sq / count - mean**2, 0.0) / count)
        worst = max(worst, abs(mixture_entropy(spec, delta) - mean) / se)
    return _result("mixture_entropy", worst, n_se, f"{samples} samples per separation")


def check_mutual_information(
    rng: np.random.Generator, n: int = 24, dim: int = 3, sigma_eps: float = 0.4
) -> OracleResult:
    """Pair-distribution MI estimates against direct pair sums of the entropy gap."""
    spec = MixtureEntropySpec(dim=dim, sigma_eps=sigma_eps)
    data = LabeledActivations.from_labels(0.6 * rng.standard_normal((n, dim)), _random_labels(rng, n))
    signs = binary_signs(data.labels)

    def gap(a, b) -> float:
        return mixture_entropy(spec, float(np.linalg.norm(a - b))) - mixture_entropy(spec, 1e3)

    pairs_all = sum(gap(data.H[i], data.H[j]) for i in range(n) for j in range(n) if i != j)
    direct_x = np.log(n) + pairs_all / n
    plus, minus = np.flatnonzero(signs > 0), np.flatnonzero(signs < 0)
    pairs_opp = sum(gap(data.H[i], data.H[j]) for i in plus for j in minus)
    direct_y = np.log(n) + 0.5 * n * pairs_opp / (plus.size * minus.size)
    error = max(
        abs(mutual_info_input(data, spec) - direct_x),
        abs(mutual_info_label(data, spec) - direct_y),
    )
    return _result("mutual_information", error, 1e-8, f"N={n}")


def run_oracle_suite(seed: int = 0, quick: bool = False, only: Optional[Sequence[str]] = None) -> List[OracleResult]:
    """
    Run every brute-force check.

    Args:
        seed: Seed of the shared RNG
        quick: Shrink sizes (fewer instances, shorter chains, fewer samples)
        only: Restrict to checks whose name starts with one of these prefixes

    Returns:
        One OracleResult per check
    """
    rng = np.random.default_rng(seed)
    scale = 0.1 if quick else 1.0
    checks = {
        "minor_inverse": lambda: check_minor_inverse(rng, trials=max(5, int(200 * scale))),
        "loo_equivalence": lambda: check_loo(rng),
        "dgl_similarity": lambda: check_dgl_similarity(rng),
        "dgl_grad": lambda: check_dgl_grad(rng, instances=max(3, int(20 * scale))),
        "linear_dgl_grad": lambda: check_linear_dgl_grad(rng, instances=max(3, int(20 * scale))),
        "backward_mse": lambda: check_backward_mse(rng, instances=max(3, int(20 * scale))),
        "backward_dgl": lambda: check_backward_dgl(rng, instances=max(3, int(20 * scale))),
        "projector_symmetry": lambda: check_projector_symmetry(rng),
        "linear_dgl_expansion": lambda: check_linear_expansion(rng),
        "langevin_gp_high": lambda: check_langevin_gp(rng, 1e-2, steps=int(200_000 * scale)),
        "langevin_gp_low": lambda: check_langevin_gp(rng, 1e-3, steps=int(200_000 * scale)),
        "kernel_monte_carlo": lambda: check_kernel_monte_carlo(rng),
        "mixture_entropy": lambda: check_mixture_entropy(rng, samples=int(10_000_000 * scale)),
        "mutual_information": lambda: check_mutual_information(rng),
    }
    results = []
    for name, check in checks.items():
        if only and not any(name.startswith(prefix) for prefix in only):
            continue
        results.append(check())
    return results
