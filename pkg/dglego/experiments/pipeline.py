"""
The five-step experimental procedure.

1. ``run_e2e``: end-to-end training under MSE (or NLL) with validation-based selection
2. ``fit_kernel_params``: per-layer top-network (sigma_w2, sigma_b2) by validation DGL
3. ``run_monitor``: step 1 again with per-layer DGL recorded along the way
4-5. ``run_lego``: layer-wise DGL training, then the classifier alone

``run_random_baseline`` trains only the classifier on top of frozen random layers.
"""
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from dglego.config import CHECKPOINT_FILE, KERNEL_SPECS_JSON, RESOLVED_CONFIG
from dglego.data.loaders import load_split
from dglego.data.splits import DataSplit
from dglego.exceptions import ConfigError, DivergenceError, FactorizationError
from dglego.experiments.metrics import emit_metrics
from dglego.experiments.training import TrainResult, evaluate, train_supervised
from dglego.gp.dgl_loss import dgl
from dglego.models.data import LabeledActivations
from dglego.models.experiment import ClassifierLoss, ExperimentConfig, OptimizerConfig, RunRecord
from dglego.models.kernel import KernelSpec
from dglego.nn.checkpoint import save_stack
from dglego.nn.layers import LayerStack, backward_dgl, build_stack, representation
from dglego.nn.optim import Optimizer
from dglego.utils.persistence import config_hash, save_kernel_specs, save_resolved_config

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    """Outcome of one pipeline step."""

    record: RunRecord
    stack: Optional[LayerStack] = None
    kernel_specs: List[KernelSpec] = field(default_factory=list)


def _new_record(kind: str, config: ExperimentConfig) -> RunRecord:
    return RunRecord(kind=kind, metadata={"seed": config.seed, "config_hash": config_hash(config)})


def initial_stack(config: ExperimentConfig, split: DataSplit) -> LayerStack:
    """Network drawn from the NNGP prior with the run seed."""
    return build_stack(
        in_dim=split.train.dim,
        width=config.model.width,
        depth=config.model.depth,
        n_classes=split.train.n_classes,
        activation=config.model.activation,
        sigma_w2=config.model.init_sigma_w2,
        sigma_b2=config.model.init_sigma_b2,
        rng=np.random.default_rng(config.seed),
    )


def _ensure_split(config: ExperimentConfig, split: Optional[DataSplit], dataset_dir: Optional[Path]) -> DataSplit:
    return split if split is not None else load_split(config.dataset, config.seed, dataset_dir)


def _record_best(record: RunRecord, stack: LayerStack, split: DataSplit, epoch: int, nll: bool = False) -> None:
    for name, data in (("train", split.train), ("val", split.val), ("test", split.test)):
        for metric, value in evaluate(stack, data, nll).items():
            record.add(epoch, name, f"best_{metric}", value)


def _train_e2e(
    config: ExperimentConfig,
    split: DataSplit,
    optimizer: OptimizerConfig,
    record: RunRecord,
    observer=None,
) -> TrainResult:
    stack = initial_stack(config, split)
    return train_supervised(
        stack,
        split.train,
        split.val,
        optimizer,
        epochs=config.e2e.epochs,
        batch_size=config.e2e.batch_size,
        patience=config.e2e.patience,
        seed=config.seed,
        test=split.test,
        loss=config.e2e.loss,
        record=record,
        observer=observer,
        observe_every=config.monitor.every,
    )


def run_e2e(
    config: ExperimentConfig,
    split: Optional[DataSplit] = None,
    dataset_dir: Optional[Path] = None,
) -> StepResult:
    """
    Step 1: train the full stack under ``e2e.loss`` and keep the best-validation checkpoint.

    With ``e2e.grid_search`` every (lr, wd) cell is trained from the same
    initialization and the cell with minimal validation loss is kept.
    """
    split = _ensure_split(config, split, dataset_dir)
    base = config.e2e.optimizer
    if config.e2e.grid_search:
        cells = [
            base.model_copy(update={"lr": lr, "wd": wd})
            for lr, wd in itertools.product(config.e2e.lr_grid, config.e2e.wd_grid)
        ]
    else:
        cells = [base]

    best: Optional[TrainResult] = None
    best_optimizer = base
    grid = []
    for cell in cells:
        record = _new_record("e2e", config)
        try:
            result = _train_e2e(config, split, cell, record)
        except DivergenceError as e:
            if len(cells) == 1:
                raise
            logger.warning(f"lr={cell.lr:g} wd={cell.wd:g} diverged: {e}")
            grid.append({"lr": cell.lr, "wd": cell.wd, "val_loss": None})
            continue
        grid.append({"lr": cell.lr, "wd": cell.wd, "val_loss": result.best_val_loss})
        if best is None or result.best_val_loss < best.best_val_loss:
            best, best_optimizer = result, cell
    if best is None:
        raise DivergenceError("every (lr, wd) cell diverged", _new_record("e2e", config))
    if len(cells) > 1:
        logger.info(f"Selected lr={best_optimizer.lr:g} wd={best_optimizer.wd:g} on validation loss")

    nll = config.e2e.loss is ClassifierLoss.NLL
    record = best.record
    _record_best(record, best.stack, split, best.best_epoch, nll)
    record.metadata.update(
        {
            "loss": config.e2e.loss.value,
            "optimizer": best_optimizer.model_dump(mode="json"),
            "best_epoch": best.best_epoch,
            "epochs_run": best.epochs_run,
            "stopped_early": best.stopped_early,
            "lr_wd_grid": grid,
            "layer_checksums": best.stack.checksums(),
        }
    )
    return StepResult(record=record, stack=best.stack)


def with_optimizer(config: ExperimentConfig, optimizer: OptimizerConfig) -> ExperimentConfig:
    """Copy of ``config`` whose end-to-end optimizer is fixed (grid search off)."""
    e2e = config.e2e.model_copy(update={"optimizer": optimizer, "grid_search": False})
    return config.model_copy(update={"e2e": e2e})


def _dgl_indices(config: ExperimentConfig, n: int, salt: int) -> Optional[np.ndarray]:
    """Fixed DGL subsample drawn from the monitoring RNG (None means full batch)."""
    size = config.dgl.batch_size(n)
    if size >= n:
        return None
    rng = np.random.default_rng([config.seed + config.monitor.seed_offset, salt])
    return np.sort(rng.choice(n, size=size, replace=False))


def fit_kernel_params(
    config: ExperimentConfig,
    stack: LayerStack,
    split: Optional[DataSplit] = None,
    dataset_dir: Optional[Path] = None,
) -> StepResult:
    """
    Step 2: grid-search the top-network parameters above every layer.

    For layer l the representation h^l of the validation set is evaluated
    under every (sigma_w2, sigma_b2) cell; the cell with minimal validation
    DGL is kept. Cells whose kernel cannot be factorized are skipped.

    Raises:
        FactorizationError: If every cell of some layer fails
    """
    split = _ensure_split(config, split, dataset_dir)
    record = _new_record("fit-kernel", config)
    indices = _dgl_indices(config, split.val.n, salt=0)
    specs: List[KernelSpec] = []
    grid_log = []
    for layer in range(config.model.depth):
        data = split.val.with_activations(representation(stack, split.val.H, layer))
        best_spec, best_value = None, np.inf
        for sigma_w2, sigma_b2 in itertools.product(config.kernel_grid.sigma_w2, config.kernel_grid.sigma_b2):
            spec = config.top_spec(layer, sigma_w2, sigma_b2)
            try:
                value = dgl(spec, data, config.dgl.include_variance, indices=indices)
            except FactorizationError as e:
                logger.warning(f"layer {layer} {spec.describe()}: {e}")
                grid_log.append({"layer": layer, "sigma_w2": sigma_w2, "sigma_b2": sigma_b2, "dgl": None})
                continue
            grid_log.append(
                {"layer": layer, "sigma_w2": sigma_w2, "sigma_b2": sigma_b2, "dgl": value.loss, "jitter": value.sigma2}
            )
            if value.loss < best_value:
                best_spec, best_value = spec, value.loss
        if best_spec is None:
            raise FactorizationError(f"no grid cell could be factorized for layer {layer}")
        logger.info(f"layer {layer}: {best_spec.describe()} val DGL {best_value:.4f}")
        record.add(0, "val", "dgl", best_value, layer)
        specs.append(best_spec)
    record.metadata.update(
        {"kernel_grid": grid_log, "kernel_specs": [s.model_dump(mode="json") for s in specs]}
    )
    return StepResult(record=record, stack=stack, kernel_specs=specs)


def layer_dgl(
    config: ExperimentConfig,
    stack: LayerStack,
    data: LabeledActivations,
    specs: Sequence[KernelSpec],
    indices: Optional[np.ndarray] = None,
) -> List[float]:
    """DGL of every activated layer's representation under its top-network spec."""
    values = []
    for layer, spec in enumerate(specs):
        h = representation(stack, data.H, layer)
        values.append(dgl(spec, data.with_activations(h), config.dgl.include_variance, indices=indices).loss)
    return values


def run_monitor(
    config: ExperimentConfig,
    kernel_specs: Sequence[KernelSpec],
    split: Optional[DataSplit] = None,
    dataset_dir: Optional[Path] = None,
) -> StepResult:
    """
    Step 3: repeat step 1 and record per-layer training-set DGL every ``monitor.every`` epochs.

    Each layer's DGL series is rank-correlated with the training-loss series
    (MSE, or cross-entropy when ``e2e.loss`` is NLL).

    Monitoring only reads the stack and draws its subsample from a separate
    RNG, so the weight trajectory equals that of step 1 with the same seed.
    """
    split = _ensure_split(config, split, dataset_dir)
    if len(kernel_specs) != config.model.depth:
        raise ConfigError(f"{len(kernel_specs)} kernel specs for {config.model.depth} layers")
    record = _new_record("monitor", config)
    indices = _dgl_indices(config, split.train.n, salt=1)

    def observe(epoch: int, stack: LayerStack) -> None:
        for layer, value in enumerate(layer_dgl(config, stack, split.train, kernel_specs, indices)):
            record.add(epoch, "train", "dgl", value, layer)

    result = _train_e2e(config, split, config.e2e.optimizer, record, observer=observe)
    nll = config.e2e.loss is ClassifierLoss.NLL
    _record_best(record, result.stack, split, result.best_epoch, nll)

    loss_metric = "nll" if nll else "mse"
    train_loss = record.series("train", loss_metric)
    correlations, finals = {}, []
    for layer in range(config.model.depth):
        series = record.series("train", "dgl", layer)
        finals.append(float(series.iloc[-1]))
        aligned = train_loss.groupby(level=0).last().reindex(series.index)
        if len(series) >= 3:
            rho = spearmanr(series.to_numpy(), aligned.to_numpy())[0]
            correlations[layer] = float(rho) if np.isfinite(rho) else None
        else:
            correlations[layer] = None
    ascending = bool(all(a <= b for a, b in zip(finals, finals[1:])))
    logger.info(f"DGL/{loss_metric} Spearman per layer: {correlations}; final DGL ascending: {ascending}")
    record.metadata.update(
        {
            "loss": config.e2e.loss.value,
            "optimizer": config.e2e.optimizer.model_dump(mode="json"),
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
            "dgl_loss_spearman": correlations,
            "final_dgl": finals,
            "final_dgl_ascending": ascending,
            "kernel_specs": [s.model_dump(mode="json") for s in kernel_specs],
            "layer_checksums": result.stack.checksums(),
        }
    )
    return StepResult(record=record, stack=result.stack, kernel_specs=list(kernel_specs))


def default_kernel_specs(config: ExperimentConfig) -> List[KernelSpec]:
    """Top-network specs matching the initialization prior (used when none were fitted)."""
    return [
        config.top_spec(layer, config.model.init_sigma_w2, config.model.init_sigma_b2)
        for layer in range(config.model.depth)
    ]


def _train_classifier(
    config: ExperimentConfig,
    stack: LayerStack,
    split: DataSplit,
    record: RunRecord,
    epoch_offset: int,
) -> TrainResult:
    """Train the classifier alone on the frozen representation of the last activated layer."""
    top = config.model.depth - 1

    def features(data: LabeledActivations) -> LabeledActivations:
        return data.with_activations(representation(stack, data.H, top))

    head = LayerStack([stack.classifier])
    sub_record = RunRecord(kind="classifier")
    result = train_supervised(
        head,
        features(split.train),
        features(split.val),
        config.lego.classifier_optimizer,
        epochs=config.lego.classifier_epochs,
        batch_size=config.lego.classifier_batch_size,
        patience=config.lego.patience,
        seed=config.seed + config.model.depth,
        test=features(split.test),
        loss=config.lego.classifier_loss,
        record=sub_record,
    )
    stack.layers[-1] = result.stack.layers[0]
    record.extend(sub_record, epoch_offset=epoch_offset)
    return result


def _freeze_audit(stack: LayerStack, frozen_checksums: Dict[int, str]) -> bool:
    current = stack.checksums()
    passed = True
    for layer, checksum in frozen_checksums.items():
        if current[layer] != checksum:
            logger.error(f"Freeze audit failed: layer {layer} changed after its phase")
            passed = False
    if passed:
        logger.info(f"Freeze audit passed for layers {sorted(frozen_checksums)}")
    return passed


def _train_layer(
    config: ExperimentConfig,
    stack: LayerStack,
    layer: int,
    spec: KernelSpec,
    split: DataSplit,
    record: RunRecord,
    epoch_offset: int,
) -> int:
    """One DGL phase: Adam on layer ``layer`` with the best-validation-DGL weights kept."""
    lego = config.lego
    train = split.train
    rng = np.random.default_rng([config.seed, layer])
    opt = Optimizer(lego.optimizer, seed=config.seed + layer)
    size = config.dgl.batch_size(train.n)
    n_chunks = max(1, int(np.ceil(train.n / size)))
    val_indices = _dgl_indices(config, split.val.n, salt=2 + layer)

    def val_dgl() -> float:
        h = representation(stack, split.val.H, layer)
        return dgl(spec, split.val.with_activations(h), config.dgl.include_variance, indices=val_indices).loss

    best_value = val_dgl()
    record.add(epoch_offset, "val", "dgl", best_value, layer)
    best_params = (stack.layers[layer].weights.copy(), stack.layers[layer].bias.copy())
    since_best = 0
    epochs_run = 0
    for epoch in range(1, lego.epochs_per_layer + 1):
        epochs_run = epoch
        losses = []
        for chunk in np.array_split(rng.permutation(train.n), n_chunks):
            value, grads = backward_dgl(
                stack, layer, train.H, train, spec, config.dgl.include_variance, indices=chunk
            )
            if not np.isfinite(value.loss):
                raise DivergenceError(f"non-finite DGL in layer {layer} at epoch {epoch}", record)
            try:
                opt.step(stack, grads)
            except DivergenceError as e:
                raise DivergenceError(str(e), record) from e
            losses.append(value.loss)
        current = val_dgl()
        record.add(epoch_offset + epoch, "train", "dgl", float(np.mean(losses)), layer)
        record.add(epoch_offset + epoch, "val", "dgl", current, layer)
        if current < best_value:
            best_value, since_best = current, 0
            best_params = (stack.layers[layer].weights.copy(), stack.layers[layer].bias.copy())
        else:
            since_best += 1
        if since_best >= lego.patience:
            logger.info(f"layer {layer}: early stopping at epoch {epoch}")
            break
    stack.layers[layer].weights, stack.layers[layer].bias = best_params
    logger.info(f"layer {layer}: best val DGL {best_value:.4f} after {epochs_run} epochs")
    return epochs_run


def run_lego(
    config: ExperimentConfig,
    kernel_specs: Optional[Sequence[KernelSpec]] = None,
    split: Optional[DataSplit] = None,
    dataset_dir: Optional[Path] = None,
) -> StepResult:
    """
    Steps 4-5: train activated layers one at a time under the DGL, freezing
    each after its phase, then train the classifier alone.

    Args:
        config: Run configuration
        kernel_specs: One top-network spec per activated layer; None uses
            ``default_kernel_specs``
        split: Pre-built split (loaded from the config otherwise)
        dataset_dir: Dataset root override
    """
    split = _ensure_split(config, split, dataset_dir)
    specs = list(kernel_specs) if kernel_specs is not None else default_kernel_specs(config)
    if len(specs) != config.model.depth:
        raise ConfigError(f"{len(specs)} kernel specs for {config.model.depth} layers")
    record = _new_record("lego", config)
    stack = initial_stack(config, split)
    frozen: Dict[int, str] = {}
    offset = 0
    for layer, spec in enumerate(specs):
        logger.info(f"DGL phase for layer {layer} with {spec.describe()}")
        offset += _train_layer(config, stack, layer, spec, split, record, offset) + 1
        stack.freeze(layer)
        frozen[layer] = stack.layers[layer].checksum()

    result = _train_classifier(config, stack, split, record, offset)
    _record_best(record, stack, split, offset + result.best_epoch)
    audit = _freeze_audit(stack, frozen)
    record.metadata.update(
        {
            "kernel_specs": [s.model_dump(mode="json") for s in specs],
            "layer_checksums": stack.checksums(),
            "frozen_checksums": frozen,
            "freeze_audit_passed": audit,
            "classifier_loss": config.lego.classifier_loss.value,
            "classifier_best_epoch": result.best_epoch,
        }
    )
    return StepResult(record=record, stack=stack, kernel_specs=specs)


def run_random_baseline(
    config: ExperimentConfig,
    split: Optional[DataSplit] = None,
    dataset_dir: Optional[Path] = None,
) -> StepResult:
    """Classifier-only training on top of the frozen random initialization."""
    split = _ensure_split(config, split, dataset_dir)
    record = _new_record("random-baseline", config)
    stack = initial_stack(config, split)
    stack.freeze_all_but_classifier()
    frozen = {layer: stack.layers[layer].checksum() for layer in range(config.model.depth)}
    result = _train_classifier(config, stack, split, record, 0)
    _record_best(record, stack, split, result.best_epoch)
    record.metadata.update(
        {
            "layer_checksums": stack.checksums(),
            "frozen_checksums": frozen,
            "freeze_audit_passed": _freeze_audit(stack, frozen),
            "classifier_best_epoch": result.best_epoch,
        }
    )
    return StepResult(record=record, stack=stack)


def write_step(config: ExperimentConfig, directory: Path, result: StepResult) -> Dict[str, Path]:
    """Persist metrics, resolved config, checkpoint and kernel specs of one step."""
    directory = Path(directory)
    paths = emit_metrics(result.record, directory)
    paths["config"] = save_resolved_config(config, directory / RESOLVED_CONFIG)
    if result.stack is not None:
        paths["checkpoint"] = save_stack(result.stack, directory / CHECKPOINT_FILE)
    if result.kernel_specs:
        paths["kernel_specs"] = save_kernel_specs(result.kernel_specs, directory / KERNEL_SPECS_JSON)
    return paths


def pipeline(
    config: ExperimentConfig,
    run_dir: Path,
    dataset_dir: Optional[Path] = None,
) -> Dict[str, StepResult]:
    """Run steps 1-5 and the random baseline on one split, writing each step to its own folder."""
    split = load_split(config.dataset, config.seed, dataset_dir)
    results: Dict[str, StepResult] = {}

    results["e2e"] = run_e2e(config, split)
    write_step(config, run_dir / "e2e", results["e2e"])
    chosen = OptimizerConfig.model_validate(results["e2e"].record.metadata["optimizer"])
    tuned = with_optimizer(config, chosen)

    results["fit-kernel"] = fit_kernel_params(tuned, results["e2e"].stack, split)
    write_step(tuned, run_dir / "fit-kernel", results["fit-kernel"])
    specs = results["fit-kernel"].kernel_specs

    results["monitor"] = run_monitor(tuned, specs, split)
    write_step(tuned, run_dir / "monitor", results["monitor"])

    results["lego"] = run_lego(tuned, specs, split)
    write_step(tuned, run_dir / "lego", results["lego"])

    results["random-baseline"] = run_random_baseline(tuned, split)
    write_step(tuned, run_dir / "random-baseline", results["random-baseline"])
    return results
