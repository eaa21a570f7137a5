"""Deep nearest-class-mean classification.

A small dense feature extractor trained with a distance-softmax loss feeds a
nearest-class-mean head that absorbs new classes through streaming mean
updates, with KNN and raw-space NCM baselines, a synthetic sensor-style data
generator, and a benchmark harness for class-increment sweeps.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402,F401
    CsvParseError,
    Dataset,
    SplitSpec,
    StandardizationStats,
    SyntheticSpec,
    apply_standardization,
    fit_standardization,
    generate_synthetic,
    load_csv,
    pca_project,
    save_csv,
    split,
)
from .network import (  # noqa: F401
    LayerSpec,
    OptimizerState,
    TrainingDivergedError,
    WeightStack,
    backward,
    forward,
    init_weights,
    layer_chain,
    relu,
    sgd_momentum_step,
)
from .ncm import (  # noqa: F401
    ClassMeanRegistry,
    class_means_from,
    class_probabilities,
    distances,
    incremental_update,
    loss,
    loss_grad_wrt_features,
    predict,
)
from .training import (  # noqa: F401
    DncmModel,
    TrainingConfig,
    TrainReport,
    evaluate,
    initial_train,
    load_model,
    save_model,
    updating_train,
)
from .baselines import (  # noqa: F401
    KnnModel,
    RawNcmModel,
    knn_add,
    knn_predict,
    raw_ncm_add,
    raw_ncm_fit,
    raw_ncm_predict,
)
from .bench import (  # noqa: F401
    BenchSetup,
    SweepReport,
    SweepSpec,
    build_class_accuracy_table,
    measure_predict_latency,
    run_initial_class_sweep,
    run_new_class_sweep,
    run_sample_size_sweep,
)
