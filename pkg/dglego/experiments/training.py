"""
Supervised minibatch training with validation-based early stopping.

The trainer owns the shuffle RNG of a run. Observers (e.g. DGL monitoring)
are called with the current stack after each evaluated epoch and must not
mutate it.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.special import log_softmax

from dglego.exceptions import DivergenceError
from dglego.models.data import LabeledActivations
from dglego.models.experiment import ClassifierLoss, OptimizerConfig, RunRecord
from dglego.nn.layers import LayerStack, backward_mse, backward_nll, forward, mse_loss
from dglego.nn.optim import Optimizer

logger = logging.getLogger(__name__)

EpochObserver = Callable[[int, LayerStack], None]


@dataclass
class TrainResult:
    """Best stack (by validation loss) and bookkeeping of a training run."""

    stack: LayerStack
    record: RunRecord
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    stopped_early: bool


def evaluate(stack: LayerStack, data: LabeledActivations, nll: bool = False) -> Dict[str, float]:
    """Mean squared error per sample and accuracy (plus mean cross-entropy if ``nll``)."""
    if data.n == 0:
        return {}
    output = forward(stack, data.H).output
    results = {
        "mse": mse_loss(output, data.targets) / data.n,
        "accuracy": float(np.mean(np.argmax(output, axis=1) == data.labels)),
    }
    if nll:
        log_p = log_softmax(output, axis=1)
        results["nll"] = -float(np.mean(log_p[np.arange(data.n), data.labels]))
    return results


def record_evaluation(
    record: RunRecord,
    epoch: int,
    stack: LayerStack,
    splits: Dict[str, LabeledActivations],
    nll: bool = False,
) -> Dict[str, Dict[str, float]]:
    results = {}
    for split, data in splits.items():
        results[split] = evaluate(stack, data, nll)
        for metric, value in results[split].items():
            record.add(epoch, split, metric, value)
    return results


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_supervised(
    stack: LayerStack,
    train: LabeledActivations,
    val: LabeledActivations,
    optimizer: OptimizerConfig,
    epochs: int,
    batch_size: int,
    patience: int,
    seed: int,
    test: Optional[LabeledActivations] = None,
    loss: ClassifierLoss = ClassifierLoss.MSE,
    record: Optional[RunRecord] = None,
    observer: Optional[EpochObserver] = None,
    observe_every: int = 1,
) -> TrainResult:
    """
    Train all non-frozen layers of ``stack`` in place.

    Args:
        stack: Network to train
        train: Inputs (as H) and targets
        val: Validation set; drives early stopping and best-epoch selection
        optimizer: Update rule
        epochs: Epoch budget
        batch_size: Minibatch size (gradients are mean-reduced)
        patience: Stop after this many epochs without validation improvement
        seed: Seeds the shuffles and the optimizer noise
        test: Optional test set, evaluated every epoch
        loss: MSE or softmax cross-entropy
        record: Record to append to (a new one is created otherwise)
        observer: Called as observer(epoch, stack) at epoch 0, every
            ``observe_every`` epochs and after the last epoch
        observe_every: Observer cadence

    Returns:
        TrainResult holding a copy of the best stack

    Raises:
        DivergenceError: If a loss or gradient becomes non-finite
    """
    record = record if record is not None else RunRecord(kind="train")
    rng = np.random.default_rng(seed)
    opt = Optimizer(optimizer, seed=seed)
    splits = {"train": train, "val": val}
    if test is not None and test.n:
        splits["test"] = test

    use_nll = loss is ClassifierLoss.NLL
    selection = "nll" if use_nll else "mse"
    start = record_evaluation(record, 0, stack, splits, use_nll)
    if observer is not None:
        observer(0, stack)
    best_val = start["val"][selection]
    best_epoch, best_stack = 0, stack.copy()
    since_best = 0
    epoch = 0
    stopped_early = False

    for epoch in range(1, epochs + 1):
        for idx in _batches(train.n, batch_size, rng):
            if loss is ClassifierLoss.NLL:
                value, grads = backward_nll(stack, train.H[idx], train.labels[idx], reduction="mean")
            else:
                value, grads = backward_mse(stack, train.H[idx], train.targets[idx], reduction="mean")
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", record)
            try:
                opt.step(stack, grads)
            except DivergenceError as e:
                raise DivergenceError(str(e), record) from e

        results = record_evaluation(record, epoch, stack, splits, use_nll)
        record.add(epoch, "train", "wall_time", record.elapsed())
        if observer is not None and (epoch % observe_every == 0 or epoch == epochs):
            observer(epoch, stack)

        val_loss = results["val"][selection]
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", record)
        if val_loss < best_val:
            best_val, best_epoch, best_stack = val_loss, epoch, stack.copy()
            since_best = 0
        else:
            since_best += 1
        if epoch % 10 == 0 or epoch == epochs:
            logger.info(
                f"epoch {epoch}: train mse {results['train']['mse']:.4f} "
                f"val {selection} {val_loss:.4f} val acc {results['val']['accuracy']:.4f}"
            )
        if since_best >= patience:
            logger.info(f"Early stopping at epoch {epoch}; best epoch {best_epoch}")
            stopped_early = True
            if observer is not None and epoch % observe_every != 0 and epoch != epochs:
                observer(epoch, stack)
            break

    return TrainResult(
        stack=best_stack,
        record=record,
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
        epochs_run=epoch,
        stopped_early=stopped_early,
    )
