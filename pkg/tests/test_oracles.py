"""Tests for the brute-force cross-checks and the IB report."""
import numpy as np
import pandas as pd
import pytest

from dglego.experiments.ib_report import ib_report
from dglego.experiments.oracles import (
    check_dgl_grad,
    check_dgl_similarity,
    check_kernel_monte_carlo,
    check_linear_dgl_grad,
    check_loo,
    check_minor_inverse,
    check_projector_symmetry,
    finite_difference,
    relative_error,
    run_oracle_suite,
)
from dglego.models.data import LabeledActivations
from dglego.nn.layers import build_stack


def test_finite_difference_of_a_quadratic():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    numeric = finite_difference(lambda v: float(v @ A @ v), x)
    np.testing.assert_allclose(numeric, 2.0 * A @ x, rtol=1e-8)
    assert relative_error(numeric, 2.0 * A @ x) < 1e-8
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0


@pytest.mark.parametrize(
    "check",
    [
        lambda rng: check_minor_inverse(rng, trials=10, n_max=24),
        check_loo,
        check_dgl_similarity,
        lambda rng: check_dgl_grad(rng, instances=6),
        lambda rng: check_linear_dgl_grad(rng, instances=4),
        lambda rng: check_projector_symmetry(rng, transforms=10),
    ],
)
def test_exact_oracles_pass(rng, check):
    result = check(rng)
    assert result.passed, f"{result.name}: {result.error:.3e} > {result.tolerance:.1e} {result.detail}"


def test_kernels_match_wide_random_networks(rng):
    result = check_kernel_monte_carlo(rng, pairs=6, width=1 << 14, replicates=32, n_se=5.0)
    assert result.passed, result.detail


def test_oracle_suite_prefix_filter():
    results = run_oracle_suite(seed=0, quick=True, only=["minor", "dgl"])
    assert [r.name for r in results] == ["minor_inverse", "dgl_similarity", "dgl_grad"]
    assert all(r.passed for r in results)
    assert run_oracle_suite(only=["nothing"]) == []


def _two_class_data(rng, n=30, dim=4):
    labels = np.arange(n) % 2
    X = rng.standard_normal((n, dim)) + 2.0 * labels[:, None]
    return LabeledActivations.from_labels(X, labels)


def test_ib_report_writes_pdfs_per_layer(rng, tmp_path):
    stack = build_stack(4, 5, 2, 2, rng=rng)
    data = _two_class_data(rng)
    result = ib_report(stack, data, tmp_path, sigma_eps=0.5, beta=2.0, max_points=20, bins=10)
    record = result.record
    for layer in range(2):
        assert record.last("train", "mi_input", layer) <= np.log(20) + 1e-9
        assert record.last("train", "ib_loss", layer) is not None
        for population in ("all_pairs", "opposite_label"):
            frame = pd.read_csv(tmp_path / f"pdf_layer{layer}_{population}.csv")
            assert len(frame) == 10
    assert record.metadata["sigma_eps"] == {0: 0.5, 1: 0.5}


def test_ib_report_skips_label_terms_for_multiclass(rng):
    stack = build_stack(4, 5, 1, 3, rng=rng)
    data = LabeledActivations.from_labels(rng.standard_normal((12, 4)), np.arange(12) % 3)
    record = ib_report(stack, data).record
    assert record.last("train", "mi_input", 0) is not None
    assert record.last("train", "mi_label", 0) is None
    assert record.metadata["sigma_eps"][0] > 0.0
