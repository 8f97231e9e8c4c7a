import numpy as np
import pytest

from neuroform.exceptions import ConfigError, DimensionError, WeightFormatError
from neuroform.mlp import (
    AdamState,
    MlpController,
    MlpEnsemble,
    adam_step,
    load_weights,
    save_weights,
    train,
)


def test_zero_weights_give_zero_output():
    m = MlpController(4, [8, 8], 2, seed=0)
    for w in m.weights:
        w[...] = 0.0
    for b in m.biases:
        b[...] = 0.0
    out = m.forward(np.ones(4))
    assert np.array_equal(out, np.zeros(2))


def test_batchnorm_hand_value():
    # one linear unit passing x through, batch {1, 3}: mean 2, biased var 1
    m = MlpController(1, [1], 1, seed=0)
    m.weights[0][...] = 1.0
    m.biases[0][...] = 0.0
    m.weights[1][...] = 1.0
    m.biases[1][...] = 0.0
    batch = np.array([[1.0], [3.0]])
    out = m.forward(batch, mode="train")
    x_hat = 1.0 / np.sqrt(1.0 + 1e-5)
    # ReLU keeps only the positive normalized value
    assert out[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert out[1, 0] == pytest.approx(x_hat, abs=1e-12)
    assert x_hat == pytest.approx(0.99999500, abs=1e-8)
    # running statistics after one batch (momentum 0.1, unbiased variance 2)
    assert m.run_mean[0][0] == pytest.approx(0.2, abs=1e-12)
    assert m.run_var[0][0] == pytest.approx(0.9 * 1.0 + 0.1 * 2.0, abs=1e-12)


def test_relu_clips_negative_preactivation():
    m = MlpController(1, [1], 1, seed=0)
    m.weights[0][...] = 1.0
    m.biases[0][...] = 0.0
    m.run_mean[0][...] = 0.0
    m.run_var[0][...] = 1.0
    m.weights[1][...] = 1.0
    m.biases[1][...] = 0.0
    assert m.forward(np.array([-5.0]))[0] == 0.0
    assert m.forward(np.array([2.0]))[0] > 0.0


def test_train_mode_rejects_single_row():
    m = MlpController(3, [4], 1, seed=0)
    with pytest.raises(DimensionError):
        m.forward(np.ones((1, 3)), mode="train")
    with pytest.raises(ConfigError):
        m.forward(np.ones(3), mode="nope")


def test_infer_mode_is_batch_independent():
    m = MlpController(6, [16, 16], 2, seed=3)
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((7, 6))
    alone = np.stack([m.forward(rows[k]) for k in range(7)])
    together = m.forward(rows)
    shuffled = m.forward(rows[::-1])[::-1]
    assert np.array_equal(alone, together)
    assert np.array_equal(alone, shuffled)


def test_gradient_check_against_central_differences():
    rng = np.random.default_rng(1)
    m = MlpController(3, [4, 4], 2, seed=7, dtype=np.float64)
    batch = rng.standard_normal((5, 3))
    targets = rng.standard_normal((5, 2))
    grads, _ = m.backprop(batch, targets)
    params = m.parameters()
    h = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for idx in range(flat_p.size):
            orig = flat_p[idx]
            flat_p[idx] = orig + h
            _, lp = m.backprop(batch, targets)
            flat_p[idx] = orig - h
            _, lm = m.backprop(batch, targets)
            flat_p[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
            worst = max(worst, abs(fd - flat_g[idx]) / denom)
    assert worst < 1e-5


def test_zero_error_batch_has_zero_gradients():
    rng = np.random.default_rng(2)
    m = MlpController(4, [6], 3, seed=5, dtype=np.float64)
    batch = rng.standard_normal((8, 4))
    out, _ = m._forward_train(batch)
    grads, loss = m.backprop(batch, out)
    assert loss == pytest.approx(0.0, abs=1e-28)
    head_bias_grad = grads[len(m.weights) * 2 - 1]
    assert np.allclose(head_bias_grad, 0.0, atol=1e-14)
    for g in grads:
        assert np.allclose(g, 0.0, atol=1e-12)


def test_loss_of_zero_network_is_mean_squared_target_norm():
    m = MlpController(2, [4], 2, seed=0, dtype=np.float64)
    for w in m.weights:
        w[...] = 0.0
    for b in m.biases:
        b[...] = 0.0
    batch = np.zeros((4, 2))
    targets = np.array([[1.0, 0], [0, 2.0], [1.0, 1.0], [0, 0]])
    _, loss = m.backprop(batch, targets)
    assert loss == pytest.approx(np.mean(np.sum(targets**2, axis=1)), abs=1e-14)


def test_adam_first_step_hand_value():
    p = np.array([0.0])
    opt = AdamState.for_params([p])
    adam_step(opt, [p], [np.array([1.0])])
    # -lr * m_hat / (sqrt(v_hat) + eps) with m_hat = v_hat = 1
    assert abs(p[0] - (-0.000999999990)) < 1e-12
    assert opt.step_count == 1


def test_adam_zero_gradient_keeps_parameters():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(5)
    ref = p.copy()
    opt = AdamState.for_params([p])
    for _ in range(50):
        adam_step(opt, [p], [np.zeros(5)])
    assert np.array_equal(p, ref)


def test_adam_constant_gradient_step_approaches_lr():
    p = np.array([0.0])
    opt = AdamState.for_params([p])
    prev = p[0]
    sizes = []
    for _ in range(1000):
        adam_step(opt, [p], [np.array([1.0])])
        sizes.append(abs(p[0] - prev))
        prev = p[0]
    assert abs(sizes[-1] - opt.lr) < 1e-6 * opt.lr


def test_training_memorizes_small_batch():
    rng = np.random.default_rng(3)
    inputs = rng.standard_normal((4, 4))
    targets = rng.standard_normal((4, 2))
    m = MlpController(4, [512, 512, 512, 512], 2, seed=1, dtype=np.float64)
    res = train(m, inputs, targets, epochs=2000, loss_target=1e-6, batch_size=256, seed=4)
    assert res.converged
    assert res.loss_history[-1] < 1e-6


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(5)
    inputs = rng.standard_normal((32, 3))
    targets = rng.standard_normal((32, 1))
    runs = []
    for _ in range(2):
        m = MlpController(3, [8, 8], 1, seed=9, dtype=np.float64)
        res = train(m, inputs, targets, epochs=5, loss_target=0.0, batch_size=8, seed=11)
        runs.append((res.loss_history, [p.copy() for p in m.parameters()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_training_returns_warning_when_target_unreached():
    rng = np.random.default_rng(6)
    inputs = rng.standard_normal((16, 3))
    targets = rng.standard_normal((16, 2))
    m = MlpController(3, [4], 2, seed=0, dtype=np.float64)
    res = train(m, inputs, targets, epochs=3, loss_target=1e-12, batch_size=8, seed=0)
    assert not res.converged
    assert res.warning is not None
    assert res.best_loss == min(res.loss_history)


def test_weight_round_trip_preserves_outputs():
    m = MlpController(5, [16, 16], 3, seed=13, dtype=np.float64)
    rng = np.random.default_rng(1)
    batch = rng.standard_normal((6, 5))
    m.forward(batch[:4], mode="train")  # give running stats non-trivial values
    before = m.forward(batch)
    save_weights(m, "/tmp/nf_weights_test.npz")
    again = load_weights("/tmp/nf_weights_test.npz")
    assert np.array_equal(again.forward(batch), before)


def test_weight_header_shapes(tmp_path):
    n_agents, n = 5, 3
    input_dim = 2 * n_agents * n + n_agents + 1
    m = MlpController(input_dim, [512, 512, 512, 512], n, seed=0, dtype=np.float32)
    path = tmp_path / "w.npz"
    save_weights(m, path)
    again = load_weights(path)
    assert again.layer_widths() == [36, 512, 512, 512, 512, 3]
    assert again.dtype == np.float32


def test_truncated_weight_file_is_format_error(tmp_path):
    m = MlpController(4, [8], 2, seed=0)
    path = tmp_path / "w.npz"
    save_weights(m, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(WeightFormatError):
        load_weights(path)
    empty = tmp_path / "empty.npz"
    empty.write_bytes(b"")
    with pytest.raises(WeightFormatError):
        load_weights(empty)


def test_ensemble_matches_individual_models():
    rng = np.random.default_rng(2)
    models = [MlpController(7, [16, 16], 3, seed=s, dtype=np.float64) for s in range(4)]
    for m in models:
        m.forward(rng.standard_normal((8, 7)), mode="train")
    ens = MlpEnsemble(models)
    rows = rng.standard_normal((4, 7))
    got = ens.infer(rows)
    want = np.stack([m.forward(rows[k]) for k, m in enumerate(models)])
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


def test_ensemble_rejects_mixed_architectures():
    a = MlpController(4, [8], 2, seed=0)
    b = MlpController(4, [16], 2, seed=0)
    with pytest.raises(DimensionError):
        MlpEnsemble([a, b])
