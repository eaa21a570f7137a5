"""Nearest-class-mean head.

Keeps a registry of per-class feature means with observation counts,
turns feature vectors into per-class distances, softmax probabilities and
predictions, and supports the streaming running-mean update that lets new
classes join without touching the extractor.
"""

import numpy as np

from . import kernels

METRICS = ("euclidean", "sqeuclidean")

_FMT = "%.17g"
_MAGIC = "dncm-registry"
_VERSION = 1


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")


class ClassMeanRegistry:
    """Per-class running mean in feature space plus the sample count behind it.

    Labels are arbitrary nonnegative integers; reads report classes in
    ascending label order. Reads are concurrency-safe, updates are
    single-writer.
    """

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._means: dict[int, np.ndarray] = {}
        self._counts: dict[int, int] = {}
        self._stacked: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._means)

    def __contains__(self, label) -> bool:
        return int(label) in self._means

    def labels(self) -> list[int]:
        return sorted(self._means)

    def mean(self, label: int) -> np.ndarray:
        return self._means[int(label)].copy()

    def count(self, label: int) -> int:
        return self._counts[int(label)]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(labels, means) aligned arrays in ascending label order."""
        if not self._means:
            raise ValueError("registry has no classes")
        if self._stacked is None:
            labels = np.array(sorted(self._means), dtype=np.int64)
            means = np.stack([self._means[int(l)] for l in labels])
            self._stacked = (labels, means)
        return self._stacked

    def _check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"expected a feature vector, got shape {v.shape}")
        if self.dim is None:
            self.dim = v.shape[0]
        elif v.shape[0] != self.dim:
            raise ValueError(f"feature has dim {v.shape[0]}, registry holds dim {self.dim}")
        return v

    def add_observation(self, v: np.ndarray, label: int) -> None:
        """Fold one observation into its class mean (creates the class at count 1)."""
        v = self._check_vector(v)
        label = int(label)
        if label < 0:
            raise ValueError(f"labels must be nonnegative, got {label}")
        if label not in self._means:
            self._means[label] = v.copy()
            self._counts[label] = 1
        else:
            n = self._counts[label]
            self._means[label] = (n / (n + 1)) * self._means[label] + (1.0 / (n + 1)) * v
            self._counts[label] = n + 1
        self._stacked = None

    def copy(self) -> "ClassMeanRegistry":
        out = ClassMeanRegistry(self.dim)
        out._means = {k: v.copy() for k, v in self._means.items()}
        out._counts = dict(self._counts)
        return out


def class_means_from(features: np.ndarray, labels: np.ndarray) -> ClassMeanRegistry:
    """Batch class means: one registry entry per distinct label, mean = sum/count."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise ValueError(f"expected an (n, dim) feature matrix, got shape {features.shape}")
    if features.shape[0] == 0:
        raise ValueError("no samples")
    if labels.shape != (features.shape[0],):
        raise ValueError(f"{features.shape[0]} features but {labels.shape} labels")
    registry = ClassMeanRegistry(features.shape[1])
    for label in np.unique(labels):
        label = int(label)
        if label < 0:
            raise ValueError(f"labels must be nonnegative, got {label}")
        rows = features[labels == label]
        registry._means[label] = rows.sum(axis=0) / rows.shape[0]
        registry._counts[label] = rows.shape[0]
    return registry


def incremental_update(registry: ClassMeanRegistry, v: np.ndarray, y: int) -> ClassMeanRegistry:
    """Streaming mean update, in place: c <- (N/(N+1)) c + (1/(N+1)) v, N <- N+1.

    A previously unseen label starts a new class at mean v, count 1. No other
    class is touched. Returns the registry for chaining.
    """
    registry.add_observation(v, y)
    return registry


def distance_matrix(features: np.ndarray, registry: ClassMeanRegistry,
                    metric: str = "euclidean") -> np.ndarray:
    """(n, K) distances from each feature row to each class mean, labels ascending."""
    _check_metric(metric)
    _, means = registry.stacked()
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != means.shape[1]:
        raise ValueError(f"feature dim {features.shape[-1]} does not match registry "
                         f"dim {means.shape[1]}")
    d2 = kernels.sq_dist_matrix(np.atleast_2d(features), means)
    return d2 if metric == "sqeuclidean" else np.sqrt(d2)


def distances(v: np.ndarray, registry: ClassMeanRegistry,
              metric: str = "euclidean") -> np.ndarray:
    """Distance from one feature vector to every class mean, in ascending label order."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a feature vector, got shape {v.shape}")
    return distance_matrix(v, registry, metric)[0]


def class_probabilities(d: np.ndarray) -> np.ndarray:
    """Softmax over negative distances: p_k = exp(-d_k) / sum_l exp(-d_l).

    The minimum distance is subtracted before exponentiation, which leaves the
    result unchanged but avoids overflow at large distances.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty distance vector")
    shifted = d - d.min(axis=-1, keepdims=True)
    e = np.exp(-shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(features: np.ndarray, registry: ClassMeanRegistry,
                  metric: str = "euclidean") -> np.ndarray:
    """Predicted label per feature row: argmin distance, ties to the smallest label."""
    labels, _ = registry.stacked()
    d = distance_matrix(features, registry, metric)
    return labels[np.argmin(d, axis=1)]


def predict(v: np.ndarray, registry: ClassMeanRegistry, metric: str = "euclidean") -> int:
    """Label with the largest class probability (equivalently the closest mean)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a feature vector, got shape {v.shape}")
    return int(predict_batch(v, registry, metric)[0])


def _label_columns(labels, registry: ClassMeanRegistry) -> np.ndarray:
    reg_labels, _ = registry.stacked()
    col = {int(l): i for i, l in enumerate(reg_labels)}
    try:
        return np.array([col[int(y)] for y in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} not present in the registry") from None


def loss(features: np.ndarray, labels: np.ndarray, registry: ClassMeanRegistry,
         metric: str = "euclidean") -> float:
    """Negative log-likelihood of each sample's own class under the distance softmax.

    Computed in log space, so it stays finite even when the probability of the
    true class underflows.
    """
    cols = _label_columns(labels, registry)
    d = distance_matrix(features, registry, metric)
    dmin = d.min(axis=1)
    logsum = np.log(np.exp(-(d - dmin[:, None])).sum(axis=1))
    per_sample = (d[np.arange(d.shape[0]), cols] - dmin) + logsum
    return float(per_sample.sum())


def loss_grad_wrt_features(features: np.ndarray, labels: np.ndarray,
                           registry: ClassMeanRegistry,
                           metric: str = "euclidean") -> np.ndarray:
    """Per-sample gradient of `loss` w.r.t. the feature vectors.

    Class means are treated as constants. dL/dd_k = p_k - t_k; the Euclidean
    distance gradient (v - c)/d is guarded with d >= 1e-12 at its singularity.
    """
    cols = _label_columns(labels, registry)
    _, means = registry.stacked()
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    d = distance_matrix(features, registry, metric)
    p = class_probabilities(d)
    coef = -p  # dL/dd_k = t_k - p_k (the logit is the negated distance)
    coef[np.arange(coef.shape[0]), cols] += 1.0
    diff = features[:, None, :] - means[None, :, :]
    if metric == "euclidean":
        coef = coef / np.maximum(d, 1e-12)
    else:
        coef = 2.0 * coef
    return np.einsum("nk,nkd->nd", coef, diff)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def registry_to_text(registry: ClassMeanRegistry) -> str:
    labels = registry.labels()
    dim = registry.dim if registry.dim is not None else 0
    lines = [f"{_MAGIC} {_VERSION} {len(labels)} {dim}"]
    for label in labels:
        mean = registry._means[label]
        lines.append(f"{label} {registry._counts[label]} "
                     + " ".join(_FMT % v for v in mean))
    return "\n".join(lines) + "\n"


def registry_from_text(text: str) -> ClassMeanRegistry:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty registry file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != _MAGIC:
        raise ValueError(f"not a registry file: header {lines[0]!r}")
    if int(head[1]) != _VERSION:
        raise ValueError(f"unsupported registry format version {head[1]}")
    n, dim = int(head[2]), int(head[3])
    registry = ClassMeanRegistry(dim if dim > 0 else None)
    for line in lines[1:1 + n]:
        parts = line.split()
        label, count = int(parts[0]), int(parts[1])
        mean = np.array([float(v) for v in parts[2:]])
        if mean.shape[0] != dim:
            raise ValueError(f"class {label} mean has dim {mean.shape[0]}, expected {dim}")
        if count < 1:
            raise ValueError(f"class {label} has count {count}, must be >= 1")
        registry._means[label] = mean
        registry._counts[label] = count
    return registry


def save_registry(registry: ClassMeanRegistry, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(registry_to_text(registry))


def load_registry(path) -> ClassMeanRegistry:
    with open(path, "r", encoding="utf-8") as fh:
        return registry_from_text(fh.read())
