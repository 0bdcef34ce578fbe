import math

import numpy as np
import pytest
from hypothesis import Phase, given, settings
from hypothesis import strategies as st

from ncbeam.array import ImpairmentConfig
from ncbeam.dataset import GenConfig, filter_labels, generate_dataset, split, truncate_features
from ncbeam.neural import (TRAINABLE, ArchitectureError, TrainConfig, backward_and_step, forward,
                           gradients, init_network, init_optimizer, load_model, loss,
                           normalize_features, normalize_rows, param_count, predict, save_model,
                           train, train_arrays)


def random_batch(M, K, n, seed):
    rng = np.random.default_rng(seed)
    return normalize_rows(rng.uniform(0.05, 1.0, (n, M))), rng.integers(0, K, n)


def test_normalize_features_examples():
    np.testing.assert_array_equal(normalize_features([2.0, 4.0, 1.0]), [0.5, 1.0, 0.25])
    np.testing.assert_array_equal(normalize_features([3.0, 3.0, 3.0]), [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        normalize_features([0.0, 0.0])


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40).filter(lambda x: max(x) > 1e-3),
       st.floats(1e-3, 1e3))
def test_normalize_features_scale_invariant(xs, c):
    a = normalize_features(xs)
    assert a.max() == 1.0
    np.testing.assert_allclose(normalize_features(np.array(xs) * c), a, rtol=1e-12, atol=1e-15)


def test_normalize_rows_leaves_zero_rows():
    out = normalize_rows([[0.0, 0.0], [1.0, 2.0]])
    np.testing.assert_array_equal(out, [[0.0, 0.0], [0.5, 1.0]])


@pytest.mark.parametrize("M,K,expected", [(20, 51, 16627), (4, 51, 15603), (36, 64, 19328)])
def test_param_count_formula(M, K, expected):
    assert param_count(M, K) == expected
    assert init_network(M, K).trainable_count() == expected


def test_param_count_matches_structure_random():
    rng = np.random.default_rng(0)
    for M, K in zip(rng.integers(1, 60, 20), rng.integers(2, 90, 20)):
        params = init_network(int(M), int(K), 1)
        counted = sum(params.tensors[name].size for name in TRAINABLE)
        assert counted == param_count(int(M), int(K)) == 64 * M + 129 * K + 8768


def test_init_network_deterministic_and_shapes():
    a, b, c = init_network(5, 8, 3), init_network(5, 8, 3), init_network(5, 8, 4)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    assert not np.array_equal(a.tensors["fc1_w"], c.tensors["fc1_w"])
    assert a.tensors["fc1_w"].shape == (64, 5) and a.tensors["fc3_w"].shape == (8, 128)
    assert np.all(a.tensors["bn1_var"] == 1) and np.all(a.tensors["bn2_mean"] == 0)
    assert np.all(np.abs(a.tensors["fc1_w"]) <= math.sqrt(3 / 5))
    assert a.meta["normalization"] == "per-sample max"
    with pytest.raises(ValueError):
        init_network(0, 8)
    with pytest.raises(ValueError):
        init_network(5, 1)


def test_forward_shape_and_zero_network():
    params = init_network(6, 11, 0)
    X, _ = random_batch(6, 11, 9, 1)
    assert forward(params, X).shape == (9, 11)
    for name in TRAINABLE:
        if name.endswith("_w"):
            params.tensors[name][:] = 0.0
    params.tensors["fc3_b"] = np.arange(11.0)
    logits = forward(params, X, "infer")
    np.testing.assert_array_equal(logits, np.tile(np.arange(11.0), (9, 1)))


def test_forward_train_mode_duplicated_batch():
    params = init_network(5, 7, 2)
    X, _ = random_batch(5, 7, 6, 3)
    logits = forward(params, np.vstack([X, X]), "train")
    np.testing.assert_allclose(logits[:6], logits[6:], rtol=0, atol=1e-12)


def test_forward_train_mode_batch_of_one_raises():
    with pytest.raises(ValueError):
        forward(init_network(5, 7), np.ones((1, 5)), "train")
    with pytest.raises(ValueError):
        forward(init_network(5, 7), np.ones((3, 4)))
    with pytest.raises(ValueError):
        forward(init_network(5, 7), np.ones((3, 5)), "eval")


def test_train_mode_updates_running_stats_infer_does_not():
    params = init_network(5, 7, 2)
    X, _ = random_batch(5, 7, 10, 3)
    before = {k: v.copy() for k, v in params.tensors.items()}
    out1 = forward(params, X, "infer")
    out2 = forward(params, X, "infer")
    np.testing.assert_array_equal(out1, out2)
    assert all(np.array_equal(before[k], params.tensors[k]) for k in before)
    forward(params, X, "train")
    z = X @ before["fc1_w"].T + before["fc1_b"]
    np.testing.assert_allclose(params.tensors["bn1_mean"], 0.01 * z.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(params.tensors["bn1_var"], 0.99 + 0.01 * z.var(axis=0, ddof=1), rtol=1e-12)


def test_loss_uniform_logits():
    assert loss(np.zeros((4, 51)), [0, 5, 17, 50]) == pytest.approx(math.log(51), abs=1e-12)
    assert math.log(51) == pytest.approx(3.932, abs=1e-3)


def test_loss_limit_and_range():
    assert loss([[800.0, 0.0, 0.0]], [0]) < 1e-300 + 1e-12
    assert loss([[0.0, 800.0]], [0]) == pytest.approx(800.0)
    with pytest.raises(ValueError):
        loss([[0.0, 1.0]], [2])


def test_loss_brute_force():
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 3, (10, 9))
    labels = rng.integers(0, 9, 10)
    expected = 0.0
    for row, y in zip(logits.tolist(), labels.tolist()):
        expected += -math.log(math.exp(row[y]) / sum(math.exp(v) for v in row))
    assert loss(logits, labels) == pytest.approx(expected / 10, abs=1e-12)


def _numeric_grad(params, X, y, name, h=1e-5):
    t = params.tensors[name]
    g = np.zeros_like(t)
    for idx in np.ndindex(t.shape):
        orig = t[idx]
        t[idx] = orig + h
        lp = gradients(params, X, y)[0]
        t[idx] = orig - h
        lm = gradients(params, X, y)[0]
        t[idx] = orig
        g[idx] = (lp - lm) / (2 * h)
    return g


def _max_rel_error(params, X, y):
    _, analytic, _ = gradients(params, X, y)
    worst = 0.0
    for name in TRAINABLE:
        num = _numeric_grad(params, X, y, name)
        a = analytic[name]
        # the floor covers tensors whose true gradient is exactly zero (pre-BN biases)
        rel = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), 1e-6)
        worst = max(worst, float(rel.max()))
    return worst


def test_gradient_check_reference_instance():
    params = init_network(5, 8, 0)
    rng = np.random.default_rng(1)
    for name in ("bn1_gamma", "bn2_gamma"):
        params.tensors[name] = rng.uniform(0.5, 1.5, params.tensors[name].shape)
    for name in ("bn1_beta", "bn2_beta", "fc3_b"):
        params.tensors[name] = rng.normal(0, 0.3, params.tensors[name].shape)
    X, y = random_batch(5, 8, 8, 2)
    assert _max_rel_error(params, X, y) < 1e-4


@pytest.mark.slow
@settings(max_examples=4, deadline=None, phases=[Phase.explicit, Phase.reuse, Phase.generate])
@given(st.integers(1, 6), st.integers(2, 6), st.integers(3, 10), st.integers(0, 10_000))
def test_gradient_check_random_shapes(M, K, n, seed):
    params = init_network(M, K, seed)
    rng = np.random.default_rng(seed)
    # nonzero BN shifts keep pre-activations off the ReLU kink (with M=1 every
    # normalized feature is 1 and all batch-normalized values are exactly 0)
    for name in ("bn1_beta", "bn2_beta"):
        params.tensors[name] = rng.choice([-1.0, 1.0], params.tensors[name].shape) * rng.uniform(0.1, 0.5, params.tensors[name].shape)
    X, y = random_batch(M, K, n, seed + 1)
    assert _max_rel_error(params, X, y) < 1e-4


def test_gradients_do_not_touch_running_stats_by_default():
    params = init_network(4, 3, 0)
    X, y = random_batch(4, 3, 5, 0)
    before = params.copy()
    gradients(params, X, y)
    assert all(np.array_equal(before.tensors[k], params.tensors[k]) for k in before.tensors)


def test_zero_learning_rate_leaves_trainables_unchanged():
    params = init_network(5, 8, 0)
    before = params.copy()
    X, y = random_batch(5, 8, 8, 0)
    backward_and_step(params, X, y, TrainConfig(learning_rate=0.0), init_optimizer(params))
    for name in TRAINABLE:
        assert np.array_equal(before.tensors[name], params.tensors[name])


def test_one_step_decreases_loss_on_separable_toy():
    rng = np.random.default_rng(0)
    X = np.vstack([np.column_stack([np.ones(16), rng.uniform(0, 0.3, 16)]),
                   np.column_stack([rng.uniform(0, 0.3, 16), np.ones(16)])])
    y = np.repeat([0, 1], 16)
    params = init_network(2, 2, 0)
    before = gradients(params, X, y)[0]
    _, step_loss = backward_and_step(params, X, y, TrainConfig(), init_optimizer(params))
    assert step_loss == pytest.approx(before)
    assert gradients(params, X, y)[0] < before


def test_non_finite_gradient_aborts():
    params = init_network(3, 2, 0)
    X = np.array([[1.0, np.nan, 0.5], [0.2, 1.0, 0.1], [1.0, 0.3, 0.3]])
    with pytest.raises(FloatingPointError):
        backward_and_step(params, X, [0, 1, 0], TrainConfig(), init_optimizer(params))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(early_stop_patience=200, max_epochs=200)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 0.1})


@pytest.fixture(scope="module")
def toy():
    """Noiseless, unimpaired N=16 array with a 16-beam grid; points keep a guard
    band from every decision boundary so the classes are separable with margin."""
    ds = generate_dataset(GenConfig(n_points=2000, aoa_range_deg=(-45.0, 45.0), K=16, M0=16, N_rx=16,
                                    impairment=ImpairmentConfig(0.0, 0.0, 0), rss_snr_db=math.inf, seed=0))
    grid = ds.dft_codebook().angles_deg
    keep = np.flatnonzero(np.abs(ds.aoas - grid[ds.labels]) <= 2.4)
    ds = filter_labels(ds.subset(keep), 2)
    train_set, test_set = split(ds, 0.75, 0)
    params, history = train(train_set, 8, TrainConfig(seed=0))
    return ds, train_set, test_set, params, history


def test_separable_toy_reaches_99_percent(toy):
    ds, train_set, test_set, params, history = toy
    assert ds.n_labels == 16
    assert len(history) <= 200
    assert np.mean(predict(params, truncate_features(test_set, 8)) == test_set.labels) >= 0.99
    assert np.mean(predict(params, truncate_features(train_set, 8)) == train_set.labels) >= 0.99


def test_history_lengths(toy):
    history = toy[4]
    n = len(history)
    assert len(history.train_acc) == len(history.val_acc) == n
    assert 0 <= history.best_epoch < n
    assert history.val_acc[history.best_epoch] == max(history.val_acc)
    lines = history.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_acc" and len(lines) == n + 1


def test_early_stopping_respects_patience():
    X, y = random_batch(4, 3, 60, 0)  # random labels: validation accuracy stalls
    cfg = TrainConfig(max_epochs=60, early_stop_patience=5, seed=1)
    _, history = train_arrays(X, y, 3, cfg)
    assert len(history) == min(60, history.best_epoch + 1 + 5)


def test_training_deterministic():
    X, y = random_batch(4, 3, 80, 5)
    cfg = TrainConfig(max_epochs=8, early_stop_patience=3, seed=2)
    a, ha = train_arrays(X, y, 3, cfg)
    b, hb = train_arrays(X, y, 3, cfg)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    assert ha.train_loss == hb.train_loss


def test_predict_scale_invariance_and_determinism(toy):
    params, test_set = toy[3], toy[2]
    raw = truncate_features(test_set, 8)[:50]
    base = predict(params, raw)
    for c in (1e-3, 0.7, 42.0):
        assert np.array_equal(predict(params, c * raw), base)
    assert predict(params, raw[0]) == base[0]
    assert np.array_equal(predict(params, raw), base)
    with pytest.raises(ValueError):
        predict(params, raw[:, :5])


def test_model_roundtrip(tmp_path, toy):
    params = toy[3]
    path = tmp_path / "model.json"
    save_model(params, path)
    back = load_model(path)
    assert all(np.array_equal(params.tensors[k], back.tensors[k]) for k in params.tensors)
    assert back.meta == params.meta and back.meta["normalization"] == "per-sample max"
    X = np.random.default_rng(0).uniform(0, 5, (100, 8))
    assert np.array_equal(predict(back, X), predict(params, X))
    with pytest.raises(ArchitectureError):
        load_model(path, M=5)
    with pytest.raises(ArchitectureError):
        load_model(path, n_labels=3)


def test_load_rejects_shape_mismatch(tmp_path):
    params = init_network(4, 3)
    params.tensors["fc2_w"] = np.zeros((128, 63))
    save_model(params, tmp_path / "m.json")
    with pytest.raises(ArchitectureError):
        load_model(tmp_path / "m.json")
