"""Experiment harness.

Reproduces the class-increment protocols at desk scale: sweep the number of
new classes, the training samples per new class, or the number of initial
classes; measure accuracy (mean and spread over repeated randomized trials)
and per-query prediction latency for each method; emit CSV reports with a
metadata sidecar. Accuracy results are bit-reproducible from (spec, seed);
latency fields are not.
"""

import json
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import data as datakit
from . import baselines, kernels, ncm, training

SWEEP_NEW_CLASSES = "new-classes"
SWEEP_SAMPLE_SIZE = "sample-size"
SWEEP_INITIAL_CLASSES = "initial-classes"
SWEEP_VARIABLES = (SWEEP_NEW_CLASSES, SWEEP_SAMPLE_SIZE, SWEEP_INITIAL_CLASSES)

METHOD_DNCM = "DNCM"
METHOD_KNN = "KNN"
METHOD_RAW_NCM = "RawNCM"
METHODS = (METHOD_DNCM, METHOD_KNN, METHOD_RAW_NCM)

_FMT = "%.17g"
LATENCY_STATISTIC = "mean_latency_s"


def derive_seed(*parts: int) -> int:
    """Stable per-trial / per-value seed derivation from the one user seed."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class SweepSpec:
    """What to sweep, how often, and for which methods."""

    variable: str
    values: list[int]
    trials: int = 30
    train_samples_per_new_class: int = 20
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    include_initial_classes: bool = True
    new_class_values: tuple[int, ...] | None = None  # second axis of the initial-class sweep
    min_test_pool: int = 480
    knn_grid: tuple[int, ...] = (1, 3, 5, 7, 9)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}, "
                             f"expected one of {SWEEP_VARIABLES}")
        if not self.values or any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be a nonempty strictly increasing list")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.train_samples_per_new_class < 1:
            raise ValueError("train_samples_per_new_class must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}, expected a subset of {METHODS}")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class BenchSetup:
    """An initial model plus the data pools a sweep runs against."""

    model: training.DncmModel
    initial_train: datakit.Dataset
    initial_val: datakit.Dataset
    initial_test: datakit.Dataset
    incremental: datakit.Dataset


def prepare_setup(initial: datakit.Dataset, incremental: datakit.Dataset,
                  config: training.TrainingConfig, seed: int,
                  split_spec: datakit.SplitSpec | None = None,
                  hidden_dims: tuple[int, ...] = training.DEFAULT_HIDDEN_DIMS,
                  model: training.DncmModel | None = None) -> BenchSetup:
    """Split the initial pool, train the extractor (unless given one pretrained)."""
    split_spec = split_spec or datakit.SplitSpec(seed=seed)
    train, val, test = datakit.split(initial, split_spec)
    if model is None:
        model, _ = training.initial_train(train, config, seed,
                                          hidden_dims=hidden_dims, validation=val)
    return BenchSetup(model, train, val, test, incremental)


@dataclass
class SweepReport:
    """Long-format result rows plus run metadata.

    One row per method x sweep point x statistic; statistics are
    mean_accuracy, accuracy_std and mean_latency_s.
    """

    variable: str
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def accuracy_rows(self) -> list[tuple]:
        """Rows without the (non-reproducible) latency statistics."""
        stat_col = self.columns.index("statistic")
        return [r for r in self.rows if r[stat_col] != LATENCY_STATISTIC]

    def lookup(self, method: str, statistic: str, **coords) -> dict[int, float]:
        """{sweep value: result} for one method and statistic."""
        out = {}
        cols = {name: i for i, name in enumerate(self.columns)}
        value_col = cols[self.columns[1]]
        for row in self.rows:
            if row[cols["method"]] != method or row[cols["statistic"]] != statistic:
                continue
            if any(row[cols[k]] != v for k, v in coords.items()):
                continue
            out[row[value_col]] = row[cols["value"]]
        return out

    def to_csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_FMT % v if isinstance(v, float) else str(v)
                                  for v in row))
        return "\n".join(lines) + "\n"

    def save(self, csv_path) -> None:
        """Write the CSV and a .meta.json sidecar next to it."""
        csv_path = str(csv_path)
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())
        sidecar = (csv_path[:-4] if csv_path.endswith(".csv") else csv_path) + ".meta.json"
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.metadata, sort_keys=True, indent=2) + "\n")


def default_report_name(variable: str) -> str:
    return "sweep_" + variable.replace("-", "_") + ".csv"


def _run_metadata(spec: SweepSpec) -> dict:
    return {
        "spec": asdict(spec),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "using_numba": kernels.using_numba,
        "python_version": sys.version.split()[0],
        "platform": platform.platform(),
    }


def _timed(predict, queries):
    t0 = time.perf_counter()
    labels = predict(queries)
    return labels, (time.perf_counter() - t0) / queries.shape[0]


class _MethodBench:
    """Per-trial integrate-then-predict drivers sharing one standardized view."""

    def __init__(self, spec: SweepSpec, setup: BenchSetup):
        std = setup.model.standardization
        self.setup = setup
        self.metric = setup.model.metric
        self.std_train_x = datakit.apply_standardization(std, setup.initial_train.features)
        self.train_y = setup.initial_train.labels
        self.raw_base = ncm.class_means_from(self.std_train_x, self.train_y)
        self.knn_k = None
        if METHOD_KNN in spec.methods:
            val_x = datakit.apply_standardization(std, setup.initial_val.features) \
                if len(setup.initial_val) else np.empty((0, setup.initial_train.dim))
            self.knn_k = baselines.select_knn_k(self.std_train_x, self.train_y,
                                                val_x, setup.initial_val.labels,
                                                spec.knn_grid)
        self.std = std

    def run(self, method: str, new_train: datakit.Dataset, test: datakit.Dataset):
        """Integrate the drawn new-class samples, then a timed predict over the test set.

        Returns (accuracy, per-query seconds). Every method starts from the
        initial-phase state again, so trials stay independent.
        """
        if method == METHOD_DNCM:
            model = training.DncmModel(self.setup.model.extractor,
                                       self.setup.model.registry.copy(),
                                       self.std, self.metric)
            training.updating_train(model, new_train)
            predicted, per_query = _timed(model.predict_batch, test.features)
        elif method == METHOD_KNN:
            knn = baselines.KnnModel(self.std_train_x, self.train_y, self.knn_k)
            if len(new_train):
                baselines.knn_add(knn, datakit.apply_standardization(
                    self.std, new_train.features), new_train.labels)
            predicted, per_query = _timed(
                lambda q: baselines.knn_predict_batch(knn, datakit.apply_standardization(self.std, q)),
                test.features)
        elif method == METHOD_RAW_NCM:
            raw = baselines.RawNcmModel(self.raw_base.copy(), self.metric)
            if len(new_train):
                baselines.raw_ncm_add(raw, datakit.apply_standardization(
                    self.std, new_train.features), new_train.labels)
            predicted, per_query = _timed(
                lambda q: baselines.raw_ncm_predict_batch(raw, datakit.apply_standardization(self.std, q)),
                test.features)
        else:
            raise ValueError(f"unknown method {method!r}")
        return float(np.mean(predicted == test.labels)), per_query


def _pool_by_class(pool: datakit.Dataset) -> tuple[np.ndarray, list[np.ndarray]]:
    labels = pool.class_labels()
    return labels, [np.flatnonzero(pool.labels == label) for label in labels]


def _check_test_floor(spec: SweepSpec, per_class_counts, m: int) -> None:
    short = [int(c - m) for c in per_class_counts if c - m < spec.min_test_pool]
    if short:
        warnings.warn(f"test pool per new class {min(short)} is below the "
                      f"{spec.min_test_pool}-sample floor", stacklevel=3)


def _increment_sweep(spec: SweepSpec, setup: BenchSetup, value_axis: str) -> SweepReport:
    pool_labels, pool_idx = _pool_by_class(setup.incremental)
    counts = [idx.shape[0] for idx in pool_idx]
    if value_axis == "classes":
        n_classes_max = max(spec.values)
        m = spec.train_samples_per_new_class
        if n_classes_max > len(pool_labels):
            raise ValueError(f"sweep asks for {n_classes_max} new classes but the pool "
                             f"has {len(pool_labels)}")
        if not spec.include_initial_classes and spec.values[0] == 0:
            raise ValueError("value 0 needs the initial classes in the test mix")
        max_m = m
    else:
        n_classes_max = len(pool_labels)
        max_m = max(spec.values)
    if any(c <= max_m for c in counts[:n_classes_max]):
        raise ValueError(f"pool classes need more than {max_m} samples each")
    _check_test_floor(spec, counts[:n_classes_max], max_m)

    runner = _MethodBench(spec, setup)
    acc: dict = {(meth, v): [] for meth in spec.methods for v in spec.values}
    lat: dict = {(meth, v): [] for meth in spec.methods for v in spec.values}
    for trial in range(spec.trials):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, trial]))
        perms = [idx[rng.permutation(idx.shape[0])] for idx in pool_idx[:n_classes_max]]
        for v in spec.values:
            if value_axis == "classes":
                k_new, m = v, spec.train_samples_per_new_class
            else:
                k_new, m = n_classes_max, v
            train_rows = [p[:m] for p in perms[:k_new]]
            test_rows = [p[m:] for p in perms[:k_new]]
            new_train = (setup.incremental.subset(np.concatenate(train_rows))
                         if k_new else datakit.Dataset(
                             np.empty((0, setup.incremental.dim)), np.empty(0, dtype=np.int64)))
            parts = [setup.initial_test] if spec.include_initial_classes else []
            if k_new:
                parts.append(setup.incremental.subset(np.concatenate(test_rows)))
            test = datakit.concat_datasets(parts)
            for method in spec.methods:
                a, t = runner.run(method, new_train, test)
                acc[(method, v)].append(a)
                lat[(method, v)].append(t)

    value_col = "new_classes" if value_axis == "classes" else "samples_per_new_class"
    report = SweepReport(variable=spec.variable,
                         columns=["method", value_col, "statistic", "value"],
                         metadata=_run_metadata(spec))
    if runner.knn_k is not None:
        report.metadata["knn_k"] = runner.knn_k
    for method in spec.methods:
        for v in spec.values:
            a = np.array(acc[(method, v)])
            report.rows.append((method, v, "mean_accuracy", float(a.mean())))
            report.rows.append((method, v, "accuracy_std", float(a.std())))
            report.rows.append((method, v, LATENCY_STATISTIC,
                                float(np.mean(lat[(method, v)]))))
    return report


def run_new_class_sweep(spec: SweepSpec, setup: BenchSetup) -> SweepReport:
    """Accuracy/latency versus the number of integrated new classes.

    Per trial and class, `train_samples_per_new_class` samples are drawn at
    random for integration and the rest of that class becomes test data; the
    test mix also keeps the initial classes by default.
    """
    if spec.variable != SWEEP_NEW_CLASSES:
        raise ValueError(f"spec variable is {spec.variable!r}")
    return _increment_sweep(spec, setup, "classes")


def run_sample_size_sweep(spec: SweepSpec, setup: BenchSetup) -> SweepReport:
    """Accuracy/latency versus training samples per new class, all pool classes in."""
    if spec.variable != SWEEP_SAMPLE_SIZE:
        raise ValueError(f"spec variable is {spec.variable!r}")
    return _increment_sweep(spec, setup, "samples")


def run_initial_class_sweep(spec: SweepSpec, initial_pool: datakit.Dataset,
                            incremental_pool: datakit.Dataset,
                            config: training.TrainingConfig,
                            hidden_dims: tuple[int, ...] = training.DEFAULT_HIDDEN_DIMS,
                            ) -> SweepReport:
    """Accuracy surface over (initial class count, new class count).

    Retrains the extractor for every initial-class count (on a fresh split of
    the restricted pool), then runs a new-class sweep against each model.
    """
    if spec.variable != SWEEP_INITIAL_CLASSES:
        raise ValueError(f"spec variable is {spec.variable!r}")
    pool_labels = initial_pool.class_labels()
    if max(spec.values) > len(pool_labels):
        raise ValueError(f"sweep asks for {max(spec.values)} initial classes but the "
                         f"pool has {len(pool_labels)}")
    n_new = len(incremental_pool.class_labels())
    new_values = list(spec.new_class_values) if spec.new_class_values else [n_new]

    report = SweepReport(variable=spec.variable,
                         columns=["method", "initial_classes", "new_classes",
                                  "statistic", "value"],
                         metadata=_run_metadata(spec))
    for k_init in spec.values:
        sub = initial_pool.only_classes(pool_labels[:k_init])
        inner_seed = derive_seed(spec.seed, k_init)
        inner_spec = SweepSpec(
            variable=SWEEP_NEW_CLASSES, values=new_values, trials=spec.trials,
            train_samples_per_new_class=spec.train_samples_per_new_class,
            methods=spec.methods, seed=inner_seed,
            include_initial_classes=spec.include_initial_classes,
            min_test_pool=spec.min_test_pool, knn_grid=spec.knn_grid)
        setup = prepare_setup(sub, incremental_pool, config, inner_seed,
                              hidden_dims=hidden_dims)
        inner = run_new_class_sweep(inner_spec, setup)
        for method, k_new, stat, value in inner.rows:
            report.rows.append((method, k_init, k_new, stat, value))
    return report


# ---------------------------------------------------------------------------
# latency measurement
# ---------------------------------------------------------------------------

@dataclass
class LatencyStats:
    """Per-query wall-clock latency over repeated passes (after a warm-up)."""

    per_query_median: float
    per_query_mean: float
    per_query_min: float
    per_query_max: float
    repetitions: int
    n_queries: int


def measure_predict_latency(predict, queries: np.ndarray,
                            repetitions: int = 5) -> LatencyStats:
    """Median-of-repetitions per-query latency of `predict` over `queries`."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[0] == 0:
        raise ValueError("queries must be nonempty")
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    predict(queries)  # warm-up (JIT compilation, caches)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        predict(queries)
        samples.append((time.perf_counter() - t0) / queries.shape[0])
    arr = np.array(samples)
    return LatencyStats(float(np.median(arr)), float(arr.mean()),
                        float(arr.min()), float(arr.max()),
                        repetitions, queries.shape[0])


# ---------------------------------------------------------------------------
# per-class accuracy table
# ---------------------------------------------------------------------------

@dataclass
class ClassAccuracyTable:
    """Per-class accuracy per method, plus per-method averages."""

    methods: list[str]
    class_labels: list[int]
    accuracy: dict  # label -> {method: accuracy}
    averages: dict  # method -> mean over class rows

    def to_csv_text(self) -> str:
        lines = ["class," + ",".join(self.methods)]
        for label in self.class_labels:
            lines.append(str(label) + "," + ",".join(
                _FMT % self.accuracy[label][m] for m in self.methods))
        lines.append("average," + ",".join(_FMT % self.averages[m] for m in self.methods))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())


def build_class_accuracy_table(predictors: dict, dataset: datakit.Dataset,
                               ) -> ClassAccuracyTable:
    """Evaluate each named predict-batch callable per class on one test set."""
    if len(dataset) == 0:
        raise ValueError("empty test set")
    labels = [int(l) for l in dataset.class_labels()]
    accuracy = {label: {} for label in labels}
    averages = {}
    for name, predict in predictors.items():
        predicted = predict(dataset.features)
        correct = predicted == dataset.labels
        for label in labels:
            accuracy[label][name] = float(correct[dataset.labels == label].mean())
        averages[name] = float(np.mean([accuracy[label][name] for label in labels]))
    return ClassAccuracyTable(list(predictors), labels, accuracy, averages)
