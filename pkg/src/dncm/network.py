"""Dense feed-forward feature extractor.

Forward pass, manual backpropagation and SGD-with-momentum updates over a
stack of fully connected layers. All math is float64; layer widths chain
strictly and every entry is kept finite (a non-finite update aborts with
:class:`TrainingDivergedError` instead of poisoning the run).
"""

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")

_FMT = "%.17g"  # enough significant digits to round-trip float64 exactly


class TrainingDivergedError(RuntimeError):
    """Raised when gradients or parameters stop being finite."""


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: output = activation(W @ input + b)."""

    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")


def layer_chain(dims: list[int], activation: str = "relu") -> list[LayerSpec]:
    """Uniform-activation layer specs for consecutive widths, e.g. [10, 64, 32, 20]."""
    if len(dims) < 2:
        raise ValueError("need at least an input and an output width")
    return [LayerSpec(a, b, activation) for a, b in zip(dims[:-1], dims[1:])]


class WeightStack:
    """Ordered layer parameters: per layer an (out, in) weight matrix and optional bias."""

    def __init__(self, specs: list[LayerSpec], weights: list[np.ndarray],
                 biases: list[np.ndarray] | None):
        if not specs:
            raise ValueError("empty layer spec")
        if len(weights) != len(specs) or (biases is not None and len(biases) != len(specs)):
            raise ValueError("parameter list length does not match spec")
        for i, (spec, w) in enumerate(zip(specs, weights)):
            if i > 0 and spec.input_dim != specs[i - 1].output_dim:
                raise ValueError(f"layer {i} input dim {spec.input_dim} does not chain "
                                 f"with previous output dim {specs[i - 1].output_dim}")
            if w.shape != (spec.output_dim, spec.input_dim):
                raise ValueError(f"layer {i} weight shape {w.shape}, "
                                 f"expected {(spec.output_dim, spec.input_dim)}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {i} weights contain non-finite entries")
            if biases is not None:
                if biases[i].shape != (spec.output_dim,):
                    raise ValueError(f"layer {i} bias shape {biases[i].shape}, "
                                     f"expected {(spec.output_dim,)}")
                if not np.all(np.isfinite(biases[i])):
                    raise ValueError(f"layer {i} bias contains non-finite entries")
        self.specs = list(specs)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = None if biases is None else [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def bias_enabled(self) -> bool:
        return self.biases is not None

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    def n_params(self) -> int:
        n = sum(w.size for w in self.weights)
        if self.biases is not None:
            n += sum(b.size for b in self.biases)
        return n

    def copy(self) -> "WeightStack":
        return WeightStack(self.specs, [w.copy() for w in self.weights],
                           None if self.biases is None else [b.copy() for b in self.biases])


@dataclass
class ActivationCache:
    """Intermediates of one forward pass: the input plus per-layer pre/post activations."""

    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


@dataclass
class GradientStack:
    """Loss partials, shape-congruent with the WeightStack they differentiate."""

    weights: list[np.ndarray]
    biases: list[np.ndarray] | None


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def init_weights(specs: list[LayerSpec], seed: int, bias_enabled: bool = True) -> WeightStack:
    """Seeded fan-in-scaled uniform init: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero."""
    if not specs:
        raise ValueError("empty layer spec")
    rng = np.random.default_rng(seed)
    weights = []
    for spec in specs:
        bound = np.sqrt(6.0 / spec.input_dim)
        weights.append(rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim)))
    biases = [np.zeros(spec.output_dim) for spec in specs] if bias_enabled else None
    return WeightStack(specs, weights, biases)


def forward(params: WeightStack, x: np.ndarray) -> tuple[np.ndarray, ActivationCache]:
    """Run one input vector (or an (n, d) batch) through the stack.

    Returns the feature output and a cache of every intermediate for backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")
    cache = ActivationCache(x=x)
    a = x
    for i, spec in enumerate(params.specs):
        z = a @ params.weights[i].T
        if params.biases is not None:
            z = z + params.biases[i]
        a = relu(z) if spec.activation == "relu" else z
        cache.pre.append(z)
        cache.post.append(a)
    return a, cache


def backward(params: WeightStack, cache: ActivationCache,
             grad_wrt_feature: np.ndarray) -> GradientStack:
    """Chain-rule gradients of the loss w.r.t. every weight and bias.

    `cache` must come from `forward` on these params; the ReLU sub-gradient
    at exactly 0 is taken as 0.
    """
    if len(cache.pre) != len(params.specs):
        raise ValueError(f"cache has {len(cache.pre)} layers, params have {len(params.specs)}")
    g = np.asarray(grad_wrt_feature, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match "
                         f"feature shape {cache.post[-1].shape}")
    single = g.ndim == 1
    if single:
        g = g[None, :]
    d_weights: list[np.ndarray] = [None] * len(params.specs)  # type: ignore[list-item]
    d_biases = [None] * len(params.specs) if params.biases is not None else None
    for i in range(len(params.specs) - 1, -1, -1):
        pre = np.atleast_2d(cache.pre[i])
        if pre.shape != g.shape:
            raise ValueError(f"cache layer {i} shape {pre.shape} does not match params")
        layer_in = np.atleast_2d(cache.post[i - 1] if i > 0 else cache.x)
        gz = g * (pre > 0.0) if params.specs[i].activation == "relu" else g
        d_weights[i] = gz.T @ layer_in
        if d_biases is not None:
            d_biases[i] = gz.sum(axis=0)
        g = gz @ params.weights[i]
    return GradientStack(weights=d_weights, biases=d_biases)  # type: ignore[arg-type]


class OptimizerState:
    """SGD-momentum state: velocity (same shape as the params), momentum, learning rate."""

    def __init__(self, params: WeightStack, momentum: float, learning_rate: float):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.momentum = float(momentum)
        self.learning_rate = float(learning_rate)
        self.velocity_w = [np.zeros_like(w) for w in params.weights]
        self.velocity_b = (None if params.biases is None
                           else [np.zeros_like(b) for b in params.biases])


def sgd_momentum_step(params: WeightStack, grads: GradientStack, state: OptimizerState) -> None:
    """One in-place update: velocity = momentum*velocity + lr*grad; params -= velocity."""
    if len(grads.weights) != len(params.weights):
        raise ValueError("gradient stack does not match parameter stack")
    for g in grads.weights:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite weight gradient")
    if grads.biases is not None:
        for g in grads.biases:
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError("non-finite bias gradient")
    for w, g, v in zip(params.weights, grads.weights, state.velocity_w):
        if g.shape != w.shape:
            raise ValueError(f"weight gradient shape {g.shape} does not match {w.shape}")
        v *= state.momentum
        v += state.learning_rate * g
        w -= v
        if not np.all(np.isfinite(w)):
            raise TrainingDivergedError("parameter update produced non-finite weights")
    if params.biases is not None:
        if grads.biases is None:
            raise ValueError("params carry biases but gradients do not")
        for b, g, v in zip(params.biases, grads.biases, state.velocity_b):
            v *= state.momentum
            v += state.learning_rate * g
            b -= v
            if not np.all(np.isfinite(b)):
                raise TrainingDivergedError("parameter update produced non-finite biases")


# ---------------------------------------------------------------------------
# serialization: versioned plain-text, round-trip exact
# ---------------------------------------------------------------------------

_MAGIC = "dncm-weights"
_VERSION = 1


def weights_to_text(params: WeightStack) -> str:
    lines = [f"{_MAGIC} {_VERSION} {len(params.specs)} {int(params.bias_enabled)}"]
    for i, spec in enumerate(params.specs):
        lines.append(f"layer {spec.output_dim} {spec.input_dim} {spec.activation}")
        for row in params.weights[i]:
            lines.append(" ".join(_FMT % v for v in row))
        if params.biases is not None:
            lines.append(" ".join(_FMT % v for v in params.biases[i]))
    return "\n".join(lines) + "\n"


def weights_from_text(text: str) -> WeightStack:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty weights file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != _MAGIC:
        raise ValueError(f"not a weights file: header {lines[0]!r}")
    if int(head[1]) != _VERSION:
        raise ValueError(f"unsupported weights format version {head[1]}")
    n_layers, bias_flag = int(head[2]), int(head[3])
    specs, weights, biases = [], [], ([] if bias_flag else None)
    pos = 1
    for _ in range(n_layers):
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "layer":
            raise ValueError(f"malformed layer header at line {pos + 1}: {lines[pos]!r}")
        out_dim, in_dim, act = int(parts[1]), int(parts[2]), parts[3]
        specs.append(LayerSpec(in_dim, out_dim, act))
        pos += 1
        rows = np.array([[float(v) for v in lines[pos + r].split()] for r in range(out_dim)])
        pos += out_dim
        weights.append(rows)
        if bias_flag:
            biases.append(np.array([float(v) for v in lines[pos].split()]))
            pos += 1
    return WeightStack(specs, weights, biases)


def save_weights(params: WeightStack, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(weights_to_text(params))


def load_weights(path) -> WeightStack:
    with open(path, "r", encoding="utf-8") as fh:
        return weights_from_text(fh.read())
