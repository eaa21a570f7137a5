import numpy as np
import pytest

from dncm import network as net


def naive_forward(params, x):
    """Straight-line oracle: per layer, explicit matrix multiply then clamp."""
    v = np.array(x, dtype=float)
    for i, spec in enumerate(params.specs):
        out = np.zeros(spec.output_dim)
        for r in range(spec.output_dim):
            s = 0.0
            for c in range(spec.input_dim):
                s += params.weights[i][r, c] * v[c]
            if params.biases is not None:
                s += params.biases[i][r]
            out[r] = max(s, 0.0) if spec.activation == "relu" else s
        v = out
    return v


def test_relu_examples():
    assert np.array_equal(net.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    assert np.array_equal(net.relu(np.array([-5.0, -1.0])), [0.0, 0.0])
    assert np.array_equal(net.relu(np.array([3.0, 7.0])), [3.0, 7.0])


def test_relu_nonnegative():
    x = np.random.default_rng(0).normal(size=1000)
    assert np.all(net.relu(x) >= 0.0)


def test_forward_zero_weights_gives_zero_feature():
    specs = net.layer_chain([3, 4, 2])
    params = net.WeightStack(specs, [np.zeros((4, 3)), np.zeros((2, 4))],
                             [np.zeros(4), np.zeros(2)])
    feature, _ = net.forward(params, np.array([1.5, -2.0, 3.0]))
    assert np.array_equal(feature, np.zeros(2))


def test_forward_single_identity_layer():
    params = net.WeightStack([net.LayerSpec(1, 1, "relu")],
                             [np.array([[1.0]])], [np.array([0.0])])
    feature, _ = net.forward(params, np.array([3.0]))
    assert np.array_equal(feature, [3.0])


def test_forward_matches_naive_oracle():
    rng = np.random.default_rng(11)
    params = net.init_weights(net.layer_chain([4, 8, 5]), seed=2)
    for layer in params.weights:
        layer += rng.normal(scale=0.1, size=layer.shape)
    for b in params.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    for _ in range(20):
        x = rng.normal(size=4)
        feature, _ = net.forward(params, x)
        np.testing.assert_allclose(feature, naive_forward(params, x), atol=1e-12)


def test_forward_batch_rows_equal_single_calls():
    rng = np.random.default_rng(5)
    params = net.init_weights(net.layer_chain([3, 6, 4]), seed=8)
    batch = rng.normal(size=(7, 3))
    features, _ = net.forward(params, batch)
    for i in range(7):
        single, _ = net.forward(params, batch[i])
        # BLAS may sum in a different order for matrix-matrix vs matrix-vector
        np.testing.assert_allclose(features[i], single, rtol=1e-12, atol=1e-15)


def test_forward_is_deterministic():
    params = net.init_weights(net.layer_chain([6, 5, 3]), seed=4)
    x = np.random.default_rng(1).normal(size=6)
    a, _ = net.forward(params, x)
    b, _ = net.forward(params, x)
    assert np.array_equal(a, b)


def test_forward_final_relu_is_nonnegative():
    params = net.init_weights(net.layer_chain([5, 9, 4]), seed=3)
    x = np.random.default_rng(2).normal(size=(50, 5))
    features, _ = net.forward(params, x)
    assert np.all(features >= 0.0)


def test_forward_rejects_dimension_mismatch():
    params = net.init_weights(net.layer_chain([4, 3]), seed=0)
    with pytest.raises(ValueError):
        net.forward(params, np.zeros(5))


def test_backward_zero_upstream_gradient():
    params = net.init_weights(net.layer_chain([4, 8, 5]), seed=6)
    x = np.random.default_rng(3).normal(size=4)
    _, cache = net.forward(params, x)
    grads = net.backward(params, cache, np.zeros(5))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.weights)
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.biases)


def test_backward_single_linear_layer():
    # identity 2->1 layer, x = [a, b], upstream [g] -> weight gradient [g*a, g*b]
    params = net.WeightStack([net.LayerSpec(2, 1, "identity")],
                             [np.array([[0.3, -0.7]])], [np.array([0.1])])
    a, b, g = 1.7, -2.5, 0.9
    _, cache = net.forward(params, np.array([a, b]))
    grads = net.backward(params, cache, np.array([g]))
    np.testing.assert_allclose(grads.weights[0], [[g * a, g * b]], rtol=1e-15)
    np.testing.assert_allclose(grads.biases[0], [g], rtol=1e-15)


def test_backward_relu_subgradient_at_zero_is_zero():
    # weight 1, bias 0, input 0 -> pre-activation exactly 0
    params = net.WeightStack([net.LayerSpec(1, 1, "relu")],
                             [np.array([[1.0]])], [np.array([0.0])])
    _, cache = net.forward(params, np.array([0.0]))
    grads = net.backward(params, cache, np.array([1.0]))
    assert grads.weights[0][0, 0] == 0.0
    assert grads.biases[0][0] == 0.0


@pytest.mark.parametrize("dims,activation", [([4, 8, 5], "relu"), ([3, 4, 2], "identity")])
def test_backward_matches_finite_differences(dims, activation):
    rng = np.random.default_rng(17)
    params = net.init_weights(net.layer_chain(dims, activation), seed=21)
    x = rng.normal(size=(6, dims[0]))
    direction = rng.normal(size=(6, dims[-1]))

    def scalar_loss():
        f, _ = net.forward(params, x)
        return float(np.sum(direction * f))

    _, cache = net.forward(params, x)
    grads = net.backward(params, cache, direction)
    h = 1e-5
    for li in range(len(params.weights)):
        for arr, analytic in ((params.weights[li], grads.weights[li]),
                              (params.biases[li], grads.biases[li])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                old = arr[ix]
                arr[ix] = old + h
                lp = scalar_loss()
                arr[ix] = old - h
                lm = scalar_loss()
                arr[ix] = old
                fd = (lp - lm) / (2 * h)
                assert abs(analytic[ix] - fd) <= 1e-4 * max(abs(analytic[ix]), abs(fd), 1e-8)


def test_backward_shape_preservation():
    params = net.init_weights(net.layer_chain([5, 7, 3]), seed=12)
    x = np.random.default_rng(9).normal(size=(4, 5))
    feature, cache = net.forward(params, x)
    grads = net.backward(params, cache, np.ones_like(feature))
    for w, g in zip(params.weights, grads.weights):
        assert w.shape == g.shape
    for b, g in zip(params.biases, grads.biases):
        assert b.shape == g.shape


def test_backward_rejects_mismatched_cache():
    params = net.init_weights(net.layer_chain([4, 6, 2]), seed=1)
    other = net.init_weights(net.layer_chain([4, 5, 2]), seed=1)
    _, cache = net.forward(other, np.zeros(4))
    with pytest.raises(ValueError):
        net.backward(params, cache, np.zeros(2))


def _scalar_stack(w0):
    return net.WeightStack([net.LayerSpec(1, 1, "identity")],
                           [np.array([[w0]])], None)


def test_sgd_momentum_hand_computed_recurrence():
    params = _scalar_stack(1.0)
    state = net.OptimizerState(params, momentum=0.9, learning_rate=0.1)
    g = net.GradientStack([np.array([[1.0]])], None)
    net.sgd_momentum_step(params, g, state)
    assert state.velocity_w[0][0, 0] == pytest.approx(0.1, abs=1e-15)
    assert params.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)
    net.sgd_momentum_step(params, g, state)
    assert state.velocity_w[0][0, 0] == pytest.approx(0.19, abs=1e-15)
    assert params.weights[0][0, 0] == pytest.approx(0.71, abs=1e-15)


def test_sgd_zero_momentum_is_plain_gradient_descent():
    rng = np.random.default_rng(14)
    params = net.init_weights(net.layer_chain([3, 4, 2]), seed=7)
    expected_w = [w - 0.05 * (i + 1.0) for i, w in enumerate(params.weights)]
    grads = net.GradientStack([np.full_like(w, i + 1.0) for i, w in enumerate(params.weights)],
                              [np.zeros_like(b) for b in params.biases])
    state = net.OptimizerState(params, momentum=0.0, learning_rate=0.05)
    net.sgd_momentum_step(params, grads, state)
    for w, e in zip(params.weights, expected_w):
        assert np.array_equal(w, e)
    del rng


def test_sgd_zero_gradient_is_fixed_point():
    params = net.init_weights(net.layer_chain([3, 2]), seed=5)
    before = params.copy()
    grads = net.GradientStack([np.zeros_like(w) for w in params.weights],
                              [np.zeros_like(b) for b in params.biases])
    state = net.OptimizerState(params, momentum=0.9, learning_rate=0.01)
    net.sgd_momentum_step(params, grads, state)
    for w, e in zip(params.weights, before.weights):
        assert np.array_equal(w, e)


def test_sgd_rejects_non_finite_gradients():
    params = net.init_weights(net.layer_chain([2, 2]), seed=0)
    grads = net.GradientStack([np.array([[np.nan, 0.0], [0.0, 0.0]])],
                              [np.zeros(2)])
    state = net.OptimizerState(params, momentum=0.5, learning_rate=0.01)
    with pytest.raises(net.TrainingDivergedError):
        net.sgd_momentum_step(params, grads, state)


def test_init_weights_is_seed_deterministic():
    specs = net.layer_chain([10, 64, 32, 20])
    a = net.init_weights(specs, seed=123)
    b = net.init_weights(specs, seed=123)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_init_weights_paper_architecture_shapes():
    params = net.init_weights(net.layer_chain([10, 64, 32, 20]), seed=0)
    assert [w.shape for w in params.weights] == [(64, 10), (32, 64), (20, 32)]
    assert all(np.array_equal(b, np.zeros_like(b)) for b in params.biases)


def test_init_weights_mean_near_zero():
    params = net.init_weights(net.layer_chain([10, 64]), seed=99)
    w = params.weights[0]
    bound = np.sqrt(6.0 / 10)
    stderr = (bound / np.sqrt(3.0)) / np.sqrt(w.size)  # uniform variance bound^2/3
    assert abs(w.mean()) <= 3 * stderr


def test_init_weights_rejects_empty_spec():
    with pytest.raises(ValueError):
        net.init_weights([], seed=0)


def test_weightstack_rejects_broken_chain():
    with pytest.raises(ValueError):
        net.layer_chain([3])
    with pytest.raises(ValueError):
        net.WeightStack([net.LayerSpec(3, 4), net.LayerSpec(5, 2)],
                        [np.zeros((4, 3)), np.zeros((2, 5))],
                        [np.zeros(4), np.zeros(2)])


def test_weightstack_rejects_non_finite():
    with pytest.raises(ValueError):
        net.WeightStack([net.LayerSpec(2, 2)], [np.array([[1.0, np.inf], [0.0, 0.0]])],
                        [np.zeros(2)])


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        net.LayerSpec(0, 3)
    with pytest.raises(ValueError):
        net.LayerSpec(3, 3, "tanh")


def test_weights_text_round_trip_is_exact():
    params = net.init_weights(net.layer_chain([7, 5, 3]), seed=31)
    params.weights[0] *= 1e-7  # exercise tiny magnitudes
    params.weights[1] *= 1e6
    text = net.weights_to_text(params)
    back = net.weights_from_text(text)
    assert [s.activation for s in back.specs] == [s.activation for s in params.specs]
    for wa, wb in zip(params.weights, back.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(params.biases, back.biases):
        assert np.array_equal(ba, bb)
    assert net.weights_to_text(back) == text


def test_weights_file_round_trip(tmp_path):
    params = net.init_weights(net.layer_chain([4, 6, 2]), seed=77, bias_enabled=False)
    path = tmp_path / "weights.txt"
    net.save_weights(params, path)
    back = net.load_weights(path)
    assert back.biases is None
    for wa, wb in zip(params.weights, back.weights):
        assert np.array_equal(wa, wb)


def test_weights_from_text_rejects_garbage():
    with pytest.raises(ValueError):
        net.weights_from_text("not-a-weights-file 1 1 1\n")
    with pytest.raises(ValueError):
        net.weights_from_text("dncm-weights 99 1 1\nlayer 1 1 relu\n0\n0\n")
