"""Experiment configuration and run records."""
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from dglego.config import DEFAULT_DGL_MINIBATCH, DEFAULT_SEED, FULL_BATCH_LIMIT
from dglego.models.data import SplitSpec, TargetEncoding
from dglego.models.kernel import Activation, KernelSpec
from dglego.nn.layers import LayerActivation

METRIC_COLUMNS = ["epoch", "split", "metric", "value", "layer"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetName(str, Enum):
    """Datasets a run can be configured with."""

    MNIST = "mnist"
    CIFAR10 = "cifar10"
    SYNTHETIC_BLOBS = "synthetic_blobs"
    TWO_MOONS = "two_moons"


class OptimizerKind(str, Enum):
    """Parameter-update rules."""

    SGD = "sgd"
    ADAM = "adam"
    LANGEVIN = "langevin"


class ClassifierLoss(str, Enum):
    """Supervised training loss (end-to-end or classifier-only)."""

    MSE = "mse"
    NLL = "nll"


class DatasetConfig(_Section):
    """Dataset source and split sizes."""

    name: DatasetName = Field(default=DatasetName.MNIST)
    dir: Optional[Path] = Field(default=None, description="Overrides DGLEGO_DATASET_DIR")
    train_size: int = Field(default=2000, gt=0)
    val_size: Optional[int] = Field(default=None, gt=0, description="Defaults to train_size")
    test_size: Optional[int] = Field(default=None, gt=0)
    classes: Optional[List[int]] = Field(default=None, description="Label ids kept, e.g. [1, 7]")
    balanced: bool = True
    encoding: TargetEncoding = TargetEncoding.ZERO_MEAN_ONE_HOT
    standardize: bool = False
    # synthetic generators only
    n_features: int = Field(default=8, gt=0)
    n_classes: int = Field(default=2, ge=2)
    noise: float = Field(default=0.5, ge=0.0)

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(
            train_size=self.train_size,
            val_size=self.val_size,
            test_size=self.test_size,
            classes=self.classes,
            balanced=self.balanced,
            encoding=self.encoding,
            standardize=self.standardize,
            seed=seed,
        )


class ModelConfig(_Section):
    """Architecture: L activated layers of width d plus a linear classifier."""

    depth: int = Field(default=3, ge=1, description="Activated layers L")
    width: int = Field(default=20, gt=0, description="Layer width d")
    activation: LayerActivation = LayerActivation.RELU
    init_sigma_w2: float = Field(default=2.0, gt=0.0)
    init_sigma_b2: float = Field(default=0.0, ge=0.0)

    @field_validator("activation")
    @classmethod
    def _activated(cls, value: LayerActivation) -> LayerActivation:
        if value is LayerActivation.IDENTITY:
            raise ValueError("hidden layers need a non-linear activation")
        return value


class OptimizerConfig(_Section):
    """Update rule and its hyperparameters."""

    kind: OptimizerKind = OptimizerKind.SGD
    lr: float = Field(default=1e-3, ge=0.0)
    wd: float = Field(default=0.0, ge=0.0, description="Weight decay")
    temperature: float = Field(default=0.0, ge=0.0, description="Langevin temperature T")
    sigma_w2: float = Field(default=1.0, gt=0.0, description="Langevin weight-prior variance")
    sigma_b2: float = Field(default=0.0, ge=0.0, description="Langevin bias-prior variance")


class E2EConfig(_Section):
    """End-to-end training (steps 1 and 3)."""

    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: ClassifierLoss = Field(default=ClassifierLoss.MSE, description="Training loss: MSE or softmax cross-entropy")
    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=64, gt=0)
    patience: int = Field(default=20, gt=0, description="Early-stopping patience in epochs")
    grid_search: bool = Field(default=False, description="Select lr and wd on validation loss")
    lr_grid: List[float] = Field(default_factory=lambda: [1e-3, 3e-4, 1e-4])
    wd_grid: List[float] = Field(default_factory=lambda: [0.0, 1e-4, 1e-3])


class LegoConfig(_Section):
    """Layer-wise DGL training (step 4) and the classifier phase (step 5)."""

    optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(kind=OptimizerKind.ADAM, lr=1e-3)
    )
    epochs_per_layer: int = Field(default=50, ge=0)
    classifier_optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(kind=OptimizerKind.ADAM, lr=1e-3)
    )
    classifier_epochs: int = Field(default=200, ge=0)
    classifier_batch_size: int = Field(default=64, gt=0)
    classifier_loss: ClassifierLoss = ClassifierLoss.MSE
    patience: int = Field(default=20, gt=0)


class DglConfig(_Section):
    """How the DGL is evaluated."""

    jitter: Optional[float] = Field(default=None, ge=0.0, description="None selects the relative jitter")
    include_variance: bool = False
    minibatch: Optional[int] = Field(
        default=None,
        ge=2,
        description=f"DGL subsample; None uses full batch up to {FULL_BATCH_LIMIT}, "
        f"else {DEFAULT_DGL_MINIBATCH}",
    )
    top_activation: Optional[Activation] = Field(
        default=None, description="Top-network kernel activation; None follows model.activation"
    )

    def batch_size(self, n: int) -> int:
        if self.minibatch is not None:
            return min(self.minibatch, n)
        return n if n <= FULL_BATCH_LIMIT else DEFAULT_DGL_MINIBATCH


class KernelGridConfig(_Section):
    """Grid for the top-network effective parameters."""

    sigma_w2: List[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5])
    sigma_b2: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1])

    @field_validator("sigma_w2", "sigma_b2")
    @classmethod
    def _non_empty(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid must not be empty")
        return value


class MonitorConfig(_Section):
    """DGL monitoring cadence (step 3)."""

    every: int = Field(default=1, gt=0, description="Evaluate per-layer DGL every this many epochs")
    seed_offset: int = Field(default=1, description="Monitor RNG seed = seed + seed_offset")


class ExperimentConfig(_Section):
    """Complete, validated configuration of one run."""

    run_name: str = "run"
    seed: int = DEFAULT_SEED
    output_dir: Optional[Path] = Field(default=None, description="Overrides DGLEGO_OUTPUT_DIR")
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    e2e: E2EConfig = Field(default_factory=E2EConfig)
    lego: LegoConfig = Field(default_factory=LegoConfig)
    dgl: DglConfig = Field(default_factory=DglConfig)
    kernel_grid: KernelGridConfig = Field(default_factory=KernelGridConfig)
    monitor: MonitorConfig = Field(default_factory=MonitorConfig)

    def top_spec(self, layer: int, sigma_w2: float, sigma_b2: float) -> KernelSpec:
        """Kernel of the top-network above activated layer ``layer``."""
        return KernelSpec(
            depth=self.model.depth - layer - 1,
            activation=self.dgl.top_activation or Activation(self.model.activation.value),
            sigma_w2=sigma_w2,
            sigma_b2=sigma_b2,
            jitter=self.dgl.jitter,
        )


@dataclass
class MetricRow:
    """One long-format metric observation."""

    epoch: int
    split: str
    metric: str
    value: float
    layer: Optional[int] = None


@dataclass
class RunRecord:
    """
    Append-only record of a run.

    Rows are long-format (epoch, split, metric, value, layer); ``metadata``
    carries chosen hyperparameters, seeds, checksums and final accuracies.
    """

    kind: str
    rows: List[MetricRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)

    def add(self, epoch: int, split: str, metric: str, value: float, layer: Optional[int] = None) -> None:
        self.rows.append(MetricRow(epoch=epoch, split=split, metric=metric, value=float(value), layer=layer))

    def extend(self, other: "RunRecord", epoch_offset: int = 0) -> None:
        for row in other.rows:
            self.rows.append(
                MetricRow(row.epoch + epoch_offset, row.split, row.metric, row.value, row.layer)
            )

    def elapsed(self) -> float:
        return time.time() - self.started_at

    def last(self, split: str, metric: str, layer: Optional[int] = None) -> Optional[float]:
        """Most recent value of a metric, or None."""
        for row in reversed(self.rows):
            if row.split == split and row.metric == metric and row.layer == layer:
                return row.value
        return None

    def series(self, split: str, metric: str, layer: Optional[int] = None) -> pd.Series:
        """Values of one metric indexed by epoch."""
        frame = self.to_frame()
        mask = (frame["split"] == split) & (frame["metric"] == metric)
        mask &= frame["layer"].isna() if layer is None else (frame["layer"] == layer)
        sub = frame[mask]
        return pd.Series(sub["value"].to_numpy(), index=sub["epoch"].to_numpy(), name=metric)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(row) for row in self.rows], columns=METRIC_COLUMNS)
        frame["layer"] = frame["layer"].astype("Int64")
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}
