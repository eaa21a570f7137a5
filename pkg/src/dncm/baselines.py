"""Reference classifiers: brute-force K-nearest-neighbours and raw-space NCM.

Both integrate new classes the model-free way (KNN by storing samples, NCM
by streaming mean updates) and exist to be compared against the deep
feature-space classifier in the benchmark harness.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels, ncm


@dataclass
class KnnModel:
    """All training samples plus the neighbourhood size k (positive odd)."""

    features: np.ndarray
    labels: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, dim) with one label per row")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be a positive odd integer, got {self.k}")
        if self.k > self.features.shape[0]:
            raise ValueError(f"k={self.k} exceeds the {self.features.shape[0]} "
                             f"training samples")


def knn_predict_batch(model: KnnModel, x: np.ndarray) -> np.ndarray:
    """Majority label among the k nearest training samples, full scan per query.

    Distance ties go to the earliest-inserted sample, vote ties to the
    smallest label.
    """
    return kernels.knn_labels(model.features, model.labels, np.atleast_2d(x), model.k)


def knn_predict(model: KnnModel, x: np.ndarray) -> int:
    return int(knn_predict_batch(model, x)[0])


def knn_add(model: KnnModel, features: np.ndarray, labels: np.ndarray) -> KnnModel:
    """Append samples to the model's database (the KNN way of learning)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if features.shape[1] != model.features.shape[1]:
        raise ValueError(f"new samples have dim {features.shape[1]}, "
                         f"model holds dim {model.features.shape[1]}")
    if labels.shape != (features.shape[0],):
        raise ValueError("one label per added sample required")
    model.features = np.concatenate([model.features, features])
    model.labels = np.concatenate([model.labels, labels])
    return model


@dataclass
class RawNcmModel:
    """Class-mean registry over raw (standardized) inputs instead of deep features."""

    registry: ncm.ClassMeanRegistry
    metric: str = "euclidean"

    def copy(self) -> "RawNcmModel":
        return RawNcmModel(self.registry.copy(), self.metric)


def raw_ncm_fit(features: np.ndarray, labels: np.ndarray,
                metric: str = "euclidean") -> RawNcmModel:
    return RawNcmModel(ncm.class_means_from(features, labels), metric)


def raw_ncm_predict_batch(model: RawNcmModel, x: np.ndarray) -> np.ndarray:
    return ncm.predict_batch(np.atleast_2d(x), model.registry, model.metric)


def raw_ncm_predict(model: RawNcmModel, x: np.ndarray) -> int:
    return int(raw_ncm_predict_batch(model, x)[0])


def raw_ncm_add(model: RawNcmModel, features: np.ndarray, labels: np.ndarray) -> RawNcmModel:
    """Fold samples into the raw-space means with the streaming update."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (features.shape[0],):
        raise ValueError("one label per added sample required")
    for row, label in zip(features, labels):
        model.registry.add_observation(row, label)
    return model


def select_knn_k(train_x: np.ndarray, train_y: np.ndarray,
                 val_x: np.ndarray, val_y: np.ndarray,
                 grid: tuple[int, ...] = (1, 3, 5, 7, 9)) -> int:
    """Pick k from the grid by validation accuracy; ties go to the smallest k."""
    candidates = [k for k in grid if 1 <= k <= train_x.shape[0]]
    if not candidates:
        raise ValueError("no grid value fits the training set size")
    if val_x.shape[0] == 0:
        return 5 if 5 in candidates else candidates[-1]
    best_k, best_acc = candidates[0], -1.0
    for k in sorted(candidates):
        model = KnnModel(train_x, train_y, k)
        acc = float(np.mean(knn_predict_batch(model, val_x) == val_y))
        if acc > best_acc:
            best_k, best_acc = k, acc
    return best_k
