"""Synthetic sensor-style datasets, CSV I/O, splits, standardization and PCA.

The generator stands in for a lab-measured gas-sensor corpus: per class a
random center, isotropic Gaussian noise, and an optional per-sample linear
drift along a class-specific direction. Everything is seed-deterministic.
"""

from dataclasses import dataclass

import numpy as np

_FMT = "%.17g"
_STD_MAGIC = "dncm-standardization"
_STD_VERSION = 1


class CsvParseError(ValueError):
    """Malformed dataset CSV; the message names the 1-based line number."""


@dataclass
class Dataset:
    """Labeled sample matrix: float64 features (n, dim), int64 labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be (n, dim), got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(f"{self.features.shape[0]} feature rows but "
                             f"{self.labels.shape} labels")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_labels(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.labels[indices])

    def only_classes(self, labels) -> "Dataset":
        mask = np.isin(self.labels, np.asarray(labels))
        return Dataset(self.features[mask], self.labels[mask])


def concat_datasets(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise ValueError("nothing to concatenate")
    return Dataset(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Knobs of the synthetic sensor-reading generator."""

    num_classes: int
    samples_per_class: int = 500
    feature_dim: int = 10
    center_scale: float = 10.0
    noise_sigma: float = 1.0
    drift_slope: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise ValueError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.center_scale <= 0:
            raise ValueError(f"center_scale must be positive, got {self.center_scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if self.drift_slope < 0:
            raise ValueError(f"drift_slope must be nonnegative, got {self.drift_slope}")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Seed-deterministic class blobs.

    Per class k: a center drawn uniformly in [-center_scale, center_scale]^dim,
    a random unit drift direction u_k, and samples
    center + N(0, noise_sigma^2 I) + drift_slope * i * u_k for i = 0..n-1.
    """
    rng = np.random.default_rng(spec.seed)
    c, n, d = spec.num_classes, spec.samples_per_class, spec.feature_dim
    centers = rng.uniform(-spec.center_scale, spec.center_scale, size=(c, d))
    if c > 1:
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        if np.min(gaps[np.triu_indices(c, k=1)]) == 0.0:
            raise ValueError("degenerate draw: coincident class centers, change the seed")
    features = np.empty((c * n, d))
    labels = np.repeat(np.arange(c, dtype=np.int64), n)
    idx = np.arange(n)[:, None]
    for k in range(c):
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        noise = rng.normal(0.0, spec.noise_sigma, size=(n, d)) if spec.noise_sigma > 0 else 0.0
        features[k * n:(k + 1) * n] = centers[k] + noise + spec.drift_slope * idx * direction
    return Dataset(features, labels)


# ---------------------------------------------------------------------------
# CSV I/O  (schema: optional header `label,f0,...,f{d-1}`, then one row per record)
# ---------------------------------------------------------------------------

def _header_for(dim: int) -> str:
    return "label," + ",".join(f"f{i}" for i in range(dim))


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header_for(dataset.dim) + "\n")
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(str(int(label)) + "," + ",".join(_FMT % v for v in row) + "\n")


def load_csv(path, allow_empty: bool = False) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_csv(fh.read(), allow_empty)


def _parse_csv(text: str, allow_empty: bool = False) -> Dataset:
    lines = text.splitlines()
    start = 0
    dim = None
    if lines:
        ncols = lines[0].count(",") + 1
        if ncols >= 2 and lines[0] == _header_for(ncols - 1):
            start = 1
            dim = ncols - 1
    labels, rows = [], []
    for lineno in range(start, len(lines)):
        line = lines[lineno]
        if not line:
            continue
        parts = line.split(",")
        if dim is None:
            if len(parts) < 2:
                raise CsvParseError(f"line {lineno + 1}: expected label plus features, "
                                    f"got {len(parts)} column(s)")
            dim = len(parts) - 1
        if len(parts) != dim + 1:
            raise CsvParseError(f"line {lineno + 1}: expected {dim + 1} columns, "
                                f"got {len(parts)}")
        try:
            labels.append(int(parts[0]))
        except ValueError:
            raise CsvParseError(f"line {lineno + 1}: label {parts[0]!r} is not an integer") from None
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise CsvParseError(f"line {lineno + 1}: non-numeric feature value") from None
    if not rows:
        if allow_empty:
            return Dataset(np.empty((0, dim if dim is not None else 0)),
                           np.empty(0, dtype=np.int64))
        raise CsvParseError("line 1: no data rows")
    return Dataset(np.array(rows), np.array(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# stratified splitting
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    """Stratified per-class fractions; they must sum to 1."""

    train: float = 0.7
    validation: float = 0.1
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name, frac in (("train", self.train), ("validation", self.validation),
                           ("test", self.test)):
            if frac < 0:
                raise ValueError(f"{name} fraction must be >= 0, got {frac}")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got "
                             f"{self.train + self.validation + self.test}")


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded per-class partition into (train, validation, test).

    Validation and test counts round down; train collects the remainder, so
    the three parts always form an exact partition of the input.
    """
    rng = np.random.default_rng(spec.seed)
    train_idx, val_idx, test_idx = [], [], []
    for label in dataset.class_labels():
        idx = np.flatnonzero(dataset.labels == label)
        idx = idx[rng.permutation(idx.shape[0])]
        n = idx.shape[0]
        n_val = int(n * spec.validation + 1e-9)
        n_test = int(n * spec.test + 1e-9)
        val_idx.append(idx[:n_val])
        test_idx.append(idx[n_val:n_val + n_test])
        train_idx.append(idx[n_val + n_test:])
    return (dataset.subset(np.concatenate(train_idx)),
            dataset.subset(np.concatenate(val_idx)),
            dataset.subset(np.concatenate(test_idx)))


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

@dataclass
class StandardizationStats:
    """Per-feature z-score parameters fitted on the initial training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be matching vectors")
        if np.any(self.std <= 0):
            raise ValueError("standard deviations must be positive")


def fit_standardization(features: np.ndarray) -> StandardizationStats:
    """Per-feature mean and population std; zero-variance features get std 1."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"expected a nonempty (n, dim) matrix, got shape {features.shape}")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return StandardizationStats(mean, std)


def apply_standardization(stats: StandardizationStats, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} does not match stats dim "
                         f"{stats.mean.shape[0]}")
    return (x - stats.mean) / stats.std


def standardization_to_text(stats: StandardizationStats) -> str:
    return (f"{_STD_MAGIC} {_STD_VERSION} {stats.mean.shape[0]}\n"
            + " ".join(_FMT % v for v in stats.mean) + "\n"
            + " ".join(_FMT % v for v in stats.std) + "\n")


def standardization_from_text(text: str) -> StandardizationStats:
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != _STD_MAGIC:
        raise ValueError("not a standardization file")
    if int(head[1]) != _STD_VERSION:
        raise ValueError(f"unsupported standardization format version {head[1]}")
    dim = int(head[2])
    mean = np.array([float(v) for v in lines[1].split()])
    std = np.array([float(v) for v in lines[2].split()])
    if mean.shape[0] != dim or std.shape[0] != dim:
        raise ValueError("standardization vectors do not match the declared dim")
    return StandardizationStats(mean, std)


def save_standardization(stats: StandardizationStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(standardization_to_text(stats))


def load_standardization(path) -> StandardizationStats:
    with open(path, "r", encoding="utf-8") as fh:
        return standardization_from_text(fh.read())


# ---------------------------------------------------------------------------
# PCA projection (for feature-space scatter plots)
# ---------------------------------------------------------------------------

def pca_project(features: np.ndarray, out_dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top principal components of the centered data.

    Returns (projected (n, out_dims), explained-variance ratios (out_dims,)
    in nonincreasing order). Implemented through the SVD of the centered
    matrix, which matches an eigendecomposition of the covariance.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected an (n, dim) matrix, got shape {features.shape}")
    n, d = features.shape
    if out_dims < 1 or out_dims > d:
        raise ValueError(f"out_dims must be in [1, {d}], got {out_dims}")
    if n < out_dims:
        raise ValueError(f"need at least {out_dims} samples, got {n}")
    centered = features - features.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    denom = max(n - 1, 1)
    variances = (s ** 2) / denom
    total = variances.sum()
    if total == 0.0:
        raise ValueError("zero-variance data: all samples are identical")
    projected = centered @ vt[:out_dims].T
    return projected, variances[:out_dims] / total


def save_projection_csv(path, labels: np.ndarray, points: np.ndarray,
                        ratios: np.ndarray) -> None:
    """`label,pc1,...` rows preceded by a `# explained_variance: ...` comment."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# explained_variance: " + ",".join(_FMT % r for r in ratios) + "\n")
        fh.write("label," + ",".join(f"pc{i + 1}" for i in range(points.shape[1])) + "\n")
        for label, row in zip(labels, points):
            fh.write(str(int(label)) + "," + ",".join(_FMT % v for v in row) + "\n")
