"""Pair-distribution and mutual-information dumps for every layer of a trained stack."""
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from dglego.exceptions import LabelError
from dglego.experiments.pipeline import StepResult
from dglego.gp.ib_loss import (
    MixtureEntropySpec,
    Population,
    close_triple_count,
    ib_loss,
    mutual_info_input,
    mutual_info_label,
    pdf,
)
from dglego.models.data import LabeledActivations
from dglego.models.experiment import RunRecord
from dglego.nn.layers import LayerStack, representation

logger = logging.getLogger(__name__)

DEFAULT_RELATIVE_SIGMA_EPS = 0.1


def ib_report(
    stack: LayerStack,
    data: LabeledActivations,
    out_dir: Optional[Path] = None,
    sigma_eps: Optional[float] = None,
    beta: float = 1.0,
    max_points: int = 1000,
    bins: int = 50,
    seed: int = 0,
) -> StepResult:
    """
    IB quantities of every activated layer.

    Args:
        stack: Trained network
        data: Inputs (as H) and labels
        out_dir: If given, ``pdf_layer{l}_{population}.csv`` files are written here
        sigma_eps: Regulator scale; None uses 0.1 x the median pair distance of each layer
        beta: Trade-off of the pairwise IB loss
        max_points: Subsample size (pairwise cost is quadratic)
        bins: Histogram bins of the dumped PDFs
        seed: Seeds the subsample

    Returns:
        StepResult whose record holds mi_input, mi_label and ib_loss per layer
    """
    record = RunRecord(kind="ib-report", metadata={"seed": seed, "beta": beta, "sigma_eps": {}})
    if data.n > max_points:
        rng = np.random.default_rng(seed)
        data = data.subset(np.sort(rng.choice(data.n, size=max_points, replace=False)))
    binary = np.unique(data.labels).size == 2
    if not binary:
        logger.warning("labels are not binary; label MI and the IB loss are skipped")

    for layer in range(stack.depth):
        rep = data.with_activations(representation(stack, data.H, layer))
        scale = sigma_eps
        if scale is None:
            scale = DEFAULT_RELATIVE_SIGMA_EPS * float(np.median(pdist(rep.H)))
        spec = MixtureEntropySpec(dim=rep.dim, sigma_eps=max(scale, 1e-12))
        record.metadata["sigma_eps"][layer] = spec.sigma_eps
        record.add(0, "train", "close_triples", close_triple_count(rep, spec), layer)
        record.add(0, "train", "mi_input", mutual_info_input(rep, spec), layer)
        populations = [Population.ALL_PAIRS]
        if binary:
            try:
                record.add(0, "train", "mi_label", mutual_info_label(rep, spec), layer)
                record.add(0, "train", "ib_loss", ib_loss(rep, spec, beta), layer)
                populations.append(Population.OPPOSITE_LABEL)
            except LabelError as e:
                logger.warning(f"layer {layer}: {e}")
        if out_dir is not None:
            for population in populations:
                pdf(rep, population, bins).write_csv(Path(out_dir) / f"pdf_layer{layer}_{population.value}.csv")
        logger.info(f"layer {layer}: I(T:X) {record.last('train', 'mi_input', layer):.4f}")
    return StepResult(record=record, stack=stack)
