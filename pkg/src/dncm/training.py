"""Two-phase learning.

Initial phase: learn the extractor weights by minibatch SGD with momentum,
recomputing the class means in feature space once per epoch. Updating phase:
the extractor is frozen and new samples only fold into the mean registry.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as datakit
from . import ncm, network
from .network import TrainingDivergedError, WeightStack

_FMT = "%.17g"

MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN_DIMS = (64, 32, 20)

WEIGHTS_FILE = "weights.txt"
REGISTRY_FILE = "registry.txt"
STANDARDIZATION_FILE = "standardization.txt"
META_FILE = "meta.json"


@dataclass
class TrainingConfig:
    """Initial-phase hyperparameters (defaults: batch 16, momentum 0.9,
    lr 0.001 halved every 15 epochs, 50 epochs)."""

    batch_size: int = 16
    momentum: float = 0.9
    learning_rate: float = 0.001
    lr_decay_factor: float = 0.5
    lr_decay_every_epochs: int = 15
    max_epoch: int = 50
    shuffle_seed: int = 0
    metric: str = "euclidean"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {self.momentum}")
        if not 0.0 < self.learning_rate < 0.1:
            raise ValueError(f"learning_rate must be in (0, 0.1), got {self.learning_rate}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_every_epochs < 1:
            raise ValueError(f"lr_decay_every_epochs must be >= 1, "
                             f"got {self.lr_decay_every_epochs}")
        if self.max_epoch < 0:
            raise ValueError(f"max_epoch must be >= 0, got {self.max_epoch}")
        if self.metric not in ncm.METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class DncmModel:
    """A trained extractor, its class-mean registry, and the frozen input scaling."""

    extractor: WeightStack
    registry: ncm.ClassMeanRegistry
    standardization: datakit.StandardizationStats
    metric: str = "euclidean"

    def features_of(self, x: np.ndarray) -> np.ndarray:
        """Standardize raw inputs and run them through the extractor."""
        out, _ = network.forward(self.extractor,
                                 datakit.apply_standardization(self.standardization, x))
        return out

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return ncm.predict_batch(self.features_of(x), self.registry, self.metric)


@dataclass
class TrainReport:
    """Per-epoch mean training loss, accuracies and the learning rate in effect."""

    mean_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)

    def n_epochs(self) -> int:
        return len(self.mean_loss)

    def to_csv_text(self) -> str:
        lines = ["epoch,mean_loss,train_accuracy,val_accuracy,learning_rate"]
        for e in range(self.n_epochs()):
            lines.append(",".join([str(e)] + [
                _FMT % v for v in (self.mean_loss[e], self.train_accuracy[e],
                                   self.val_accuracy[e], self.learning_rate[e])]))
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())


def learning_rate_at(config: TrainingConfig, epoch: int) -> float:
    """Stepwise schedule: base rate times decay_factor^(epoch // decay_every)."""
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every_epochs)


def initial_train(dataset: datakit.Dataset, config: TrainingConfig, seed: int,
                  hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS,
                  validation: datakit.Dataset | None = None,
                  ) -> tuple[DncmModel, TrainReport]:
    """Learn extractor weights on a static dataset.

    Per epoch: forward the whole training set, recompute the class means,
    then run shuffled minibatches of distance-softmax loss with SGD-momentum
    updates (means held fixed within the epoch). The returned registry is
    recomputed from the final weights so model files are self-consistent.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    stats = datakit.fit_standardization(dataset.features)
    x = datakit.apply_standardization(stats, dataset.features)
    y = dataset.labels
    x_val = (datakit.apply_standardization(stats, validation.features)
             if validation is not None and len(validation) > 0 else None)

    params = network.init_weights(network.layer_chain([dataset.dim, *hidden_dims]), seed)
    state = network.OptimizerState(params, config.momentum, config.learning_rate)
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    report = TrainReport()

    features, _ = network.forward(params, x)
    registry = ncm.class_means_from(features, y)
    n = len(dataset)
    for epoch in range(config.max_epoch):
        state.learning_rate = learning_rate_at(config, epoch)
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch_features, cache = network.forward(params, x[idx])
            batch_loss = ncm.loss(batch_features, y[idx], registry, config.metric)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}")
            grad = ncm.loss_grad_wrt_features(batch_features, y[idx], registry, config.metric)
            network.sgd_momentum_step(params, network.backward(params, cache, grad), state)
            epoch_loss += batch_loss
        features, _ = network.forward(params, x)
        registry = ncm.class_means_from(features, y)
        report.mean_loss.append(epoch_loss / n)
        report.train_accuracy.append(
            float(np.mean(ncm.predict_batch(features, registry, config.metric) == y)))
        if x_val is None:
            report.val_accuracy.append(float("nan"))
        else:
            val_features, _ = network.forward(params, x_val)
            report.val_accuracy.append(float(np.mean(
                ncm.predict_batch(val_features, registry, config.metric) == validation.labels)))
        report.learning_rate.append(state.learning_rate)
    return DncmModel(params, registry, stats, config.metric), report


def updating_train(model: DncmModel, stream: datakit.Dataset) -> DncmModel:
    """Integrate a stream of labeled samples by streaming mean updates only.

    The extractor weights are never modified. Samples are folded in input
    order; labels may be brand new or refine existing classes.
    """
    if len(stream) == 0:
        return model
    features = model.features_of(stream.features)
    for row, label in zip(features, stream.labels):
        model.registry.add_observation(row, label)
    return model


def evaluate(model: DncmModel, dataset: datakit.Dataset) -> tuple[float, dict[int, float]]:
    """Overall and per-class prediction accuracy on a labeled dataset."""
    if len(dataset) == 0:
        raise ValueError("empty evaluation dataset")
    missing = [int(l) for l in dataset.class_labels() if l not in model.registry]
    if missing:
        raise ValueError(f"labels {missing} not present in the registry")
    predicted = model.predict_batch(dataset.features)
    correct = predicted == dataset.labels
    per_class = {int(label): float(correct[dataset.labels == label].mean())
                 for label in dataset.class_labels()}
    return float(correct.mean()), per_class


# ---------------------------------------------------------------------------
# model artifact: one directory bundling weights, registry, scaling, metadata
# ---------------------------------------------------------------------------

def save_model(model: DncmModel, path, extra_meta: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    network.save_weights(model.extractor, os.path.join(path, WEIGHTS_FILE))
    ncm.save_registry(model.registry, os.path.join(path, REGISTRY_FILE))
    datakit.save_standardization(model.standardization,
                                 os.path.join(path, STANDARDIZATION_FILE))
    meta = {"format_version": MODEL_FORMAT_VERSION, "metric": model.metric}
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(path, META_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_model_meta(path) -> dict:
    with open(os.path.join(path, META_FILE), "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_model(path) -> DncmModel:
    meta = load_model_meta(path)
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {meta.get('format_version')}")
    return DncmModel(
        extractor=network.load_weights(os.path.join(path, WEIGHTS_FILE)),
        registry=ncm.load_registry(os.path.join(path, REGISTRY_FILE)),
        standardization=datakit.load_standardization(
            os.path.join(path, STANDARDIZATION_FILE)),
        metric=meta["metric"],
    )
