"""Trainer tests: splits, windows, normalization, Adam, the training loop's
determinism, and checkpoint round trips."""

import math

import numpy as np
import pytest

from stlgru.baselines import init_baseline_params
from stlgru.config import ModelConfig, SyntheticSpec, TrainConfig
from stlgru.data import SeriesTensor, generate_synthetic
from stlgru.errors import ConfigError, DivergenceError
from stlgru.metrics import compute_metrics
from stlgru.model import ParameterStore
from stlgru.training import (
    AdamState,
    Normalizer,
    adam_step,
    clip_gradients,
    evaluate,
    load_checkpoint,
    prepare_eval_windows,
    save_checkpoint,
    split_dataset,
    train,
    windowize,
)


class TestSplitDataset:
    def test_ten_steps(self):
        s = split_dataset(10)
        assert (len(s.train), len(s.test), len(s.validation)) == (6, 2, 2)

    def test_pemsd4_sized(self):
        s = split_dataset(16_992)
        assert (len(s.train), len(s.test), len(s.validation)) == (10_195, 3_398, 3_399)

    def test_degenerate_all_train(self):
        s = split_dataset(50, (1.0, 0.0, 0.0))
        assert len(s.train) == 50 and len(s.test) == 0 and len(s.validation) == 0

    def test_chronology(self):
        s = split_dataset(100)
        assert max(s.train) < min(s.test) < min(s.validation)

    def test_conventional_order_flag(self):
        s = split_dataset(100, order="train_val_test")
        assert max(s.train) < min(s.validation) < min(s.test)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError, match="sum to 1"):
            split_dataset(10, (0.5, 0.2, 0.2))

    def test_min_split_enforced(self):
        with pytest.raises(ConfigError, match="shorter than one window"):
            split_dataset(30, min_split=24)


class TestWindowize:
    def test_48_steps_two_windows(self):
        inputs, targets = windowize(np.zeros((48, 3, 1)), 12, 12)
        assert inputs.shape == (2, 12, 3, 1)
        assert targets.shape == (2, 3, 12)

    def test_47_steps_one_window(self):
        inputs, _ = windowize(np.zeros((47, 3, 1)), 12, 12)
        assert inputs.shape[0] == 1

    def test_pemsd4_train_split_window_count(self):
        inputs, _ = windowize(np.zeros((10_195, 1, 1)), 12, 12)
        assert inputs.shape[0] == 424

    def test_too_short_warns_and_returns_empty(self):
        with pytest.warns(UserWarning, match="shorter than one window"):
            inputs, targets = windowize(np.zeros((10, 3, 1)), 12, 12)
        assert inputs.shape[0] == 0 and targets.shape[0] == 0

    def test_windows_are_disjoint_consecutive_blocks(self):
        steps = np.arange(50, dtype=float).reshape(50, 1, 1)
        inputs, targets = windowize(steps, 3, 2)
        assert inputs.shape[0] == 10
        np.testing.assert_array_equal(inputs[0, :, 0, 0], [0, 1, 2])
        np.testing.assert_array_equal(targets[0, 0], [3, 4])
        np.testing.assert_array_equal(inputs[1, :, 0, 0], [5, 6, 7])


class TestNormalizer:
    def test_population_convention_and_apply(self):
        norm = Normalizer.fit(np.array([0.0, 2.0]))
        assert norm.mean == 1.0 and norm.std == 1.0
        np.testing.assert_array_equal(norm.apply(np.array([4.0])), [3.0])

    def test_apply_invert_identity(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((40, 3, 1)) * 7 + 100
        norm = Normalizer.fit(data)
        np.testing.assert_allclose(norm.invert(norm.apply(data)), data, atol=1e-12)

    def test_no_leakage_from_other_splits(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal((100, 4, 1)) + 10
        splits = split_dataset(100)
        fit = lambda v: Normalizer.fit(v[splits.train.start : splits.train.stop])
        baseline = fit(values)
        perturbed = values.copy()
        perturbed[splits.test.start :] += 1e6
        assert fit(perturbed) == baseline

    def test_constant_split_rejected_with_guidance(self):
        with pytest.raises(ConfigError, match="regenerate"):
            Normalizer.fit(np.full(10, 3.0))


def scalar_store(value: float) -> ParameterStore:
    store = ParameterStore()
    store.add("x", np.array([value]))
    return store


class TestAdam:
    def test_zero_gradient_is_noop(self):
        store = scalar_store(1.5)
        state = AdamState.for_store(store)
        before = store.export()
        assert adam_step(store, {"x": np.zeros(1)}, state, lr=0.1)
        np.testing.assert_array_equal(store["x"].data, before["x"])

    def test_first_step_moves_by_learning_rate(self):
        store = scalar_store(0.0)
        state = AdamState.for_store(store)
        adam_step(store, {"x": np.array([5.0])}, state, lr=0.01)
        delta = store["x"].data[0]
        assert math.isclose(delta, -0.01, rel_tol=1e-6)

    def test_converges_monotonically_on_quadratic(self):
        store = scalar_store(0.0)
        state = AdamState.for_store(store)
        trail = [0.0]
        for _ in range(10):
            x = store["x"].data[0]
            adam_step(store, {"x": np.array([2.0 * (x - 3.0)])}, state, lr=0.1)
            trail.append(store["x"].data[0])
        diffs = np.diff(trail)
        assert np.all(diffs > 0) and trail[-1] < 3.0

    def test_non_finite_gradient_skips_step(self):
        store = scalar_store(1.0)
        state = AdamState.for_store(store)
        before = store.export()
        assert not adam_step(store, {"x": np.array([np.inf])}, state, lr=0.1)
        np.testing.assert_array_equal(store["x"].data, before["x"])
        assert state.skipped == 1 and state.t == 0


def test_clip_gradients_global_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([0.0])}
    norm = clip_gradients(grads, max_norm=1.0)
    assert math.isclose(norm, 5.0)
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert math.isclose(total, 1.0)


@pytest.fixture(scope="module")
def small_series() -> SeriesTensor:
    spec = SyntheticSpec(n_nodes=6, n_steps=400, graph_seed=1, signal_seed=2)
    series, _ = generate_synthetic(spec)
    return series


def small_cfgs(epochs: int = 2, seed: int = 0):
    model_cfg = ModelConfig(n_nodes=6, window=6, horizon=4, hidden_dim=8, embed_dim=3)
    train_cfg = TrainConfig(epochs=epochs, seed=seed, batch_size=8)
    return model_cfg, train_cfg


class TestTrainLoop:
    def test_zero_epochs_returns_initial_params(self, small_series):
        model_cfg, train_cfg = small_cfgs(epochs=0)
        result = train("stlgru", small_series, model_cfg, train_cfg)
        seq = np.random.SeedSequence(train_cfg.seed)
        init_rng = np.random.default_rng(seq.spawn(3)[0])
        expected = init_baseline_params("stlgru", model_cfg, init_rng).export()
        for name, arr in result.best_params.items():
            np.testing.assert_array_equal(arr, expected[name])
        assert result.history == []

    def test_first_epoch_loss_near_unit_variance(self):
        series, _ = generate_synthetic(SyntheticSpec())
        model_cfg = ModelConfig(n_nodes=20, hidden_dim=16)
        train_cfg = TrainConfig(epochs=1, seed=0)
        result = train("stlgru", series, model_cfg, train_cfg)
        assert 0.7 <= result.history[0].train_loss <= 1.3

    def test_bit_identical_histories_for_same_seed(self, small_series):
        model_cfg, train_cfg = small_cfgs(epochs=3, seed=11)
        a = train("stlgru", small_series, model_cfg, train_cfg)
        b = train("stlgru", small_series, model_cfg, train_cfg)
        assert a.history == b.history
        for name in a.best_params:
            np.testing.assert_array_equal(a.best_params[name], b.best_params[name])

    def test_different_seeds_differ(self, small_series):
        model_cfg, _ = small_cfgs()
        a = train("stlgru", small_series, model_cfg, TrainConfig(epochs=2, seed=0, batch_size=8))
        b = train("stlgru", small_series, model_cfg, TrainConfig(epochs=2, seed=1, batch_size=8))
        assert a.history != b.history

    def test_persistence_not_trainable(self, small_series):
        model_cfg, train_cfg = small_cfgs()
        with pytest.raises(ConfigError, match="persistence"):
            train("persistence", small_series, model_cfg, train_cfg)

    def test_node_count_mismatch(self, small_series):
        model_cfg = ModelConfig(n_nodes=9, window=6, horizon=4, hidden_dim=8, embed_dim=3)
        with pytest.raises(ConfigError, match="nodes"):
            train("stlgru", small_series, model_cfg, TrainConfig(epochs=1))

    def test_divergence_error_carries_context(self):
        err = DivergenceError(batch_index=3, seed=7)
        assert "batch 3" in str(err) and "seed 7" in str(err)


class TestEvaluate:
    def test_persistence_on_linear_trend_has_mae_equal_horizon(self):
        # slope-1 series: repeating the last value is off by exactly h at step h.
        steps = 120
        values = np.tile(np.arange(steps, dtype=float)[:, None, None], (1, 3, 1))
        series = SeriesTensor(values=values)
        cfg = ModelConfig(n_nodes=3, window=6, horizon=6)
        tcfg = TrainConfig()
        splits = split_dataset(series.n_steps, tcfg.split_ratio, tcfg.split_order)
        normalizer = Normalizer.fit(values[splits.train.start : splits.train.stop])
        inputs, targets = prepare_eval_windows(series, cfg, tcfg, normalizer, "validation")
        report = evaluate("persistence", None, cfg, inputs, targets, normalizer, horizons=(1, 3, 6))
        for h in (1, 3, 6):
            assert math.isclose(report.per_horizon[h].mae, float(h), abs_tol=1e-9)

    def test_report_matches_standalone_metrics(self, small_series):
        model_cfg, train_cfg = small_cfgs(epochs=1)
        result = train("stlgru", small_series, model_cfg, train_cfg)
        store = init_baseline_params("stlgru", model_cfg, np.random.default_rng(0))
        store.load(result.best_params)
        inputs, targets = prepare_eval_windows(
            small_series, model_cfg, train_cfg, result.normalizer, "validation"
        )
        report = evaluate("stlgru", store, model_cfg, inputs, targets, result.normalizer,
                          horizons=(2, 4))
        from stlgru.training import _forward_eval

        preds = result.normalizer.invert(_forward_eval("stlgru", store, model_cfg, inputs))
        assert report.per_horizon[2] == compute_metrics(preds[..., 1], targets[..., 1])
        assert report.overall == compute_metrics(preds, targets)


class TestCheckpoint:
    def test_roundtrip_exact(self, small_series, tmp_path):
        model_cfg, train_cfg = small_cfgs(epochs=2)
        result = train("stlgru", small_series, model_cfg, train_cfg)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, result)
        loaded = load_checkpoint(path)
        assert loaded.kind == "stlgru"
        assert loaded.model_cfg == result.model_cfg
        assert loaded.train_cfg == result.train_cfg
        assert loaded.normalizer == result.normalizer
        assert loaded.history == result.history
        for name, arr in result.best_params.items():
            np.testing.assert_array_equal(loaded.params[name], arr)
        store = loaded.build_store()
        assert store.total_size() == sum(a.size for a in result.best_params.values())

    def test_format_tag_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other-v9"}')
        with pytest.raises(ConfigError, match="format"):
            load_checkpoint(path)

    def test_float32_roundtrip(self, small_series, tmp_path):
        model_cfg = ModelConfig(n_nodes=6, window=6, horizon=4, hidden_dim=8,
                                embed_dim=3, precision="f32")
        result = train("stlgru", small_series, model_cfg, TrainConfig(epochs=1, batch_size=8))
        path = tmp_path / "ckpt32.json"
        save_checkpoint(path, result)
        loaded = load_checkpoint(path)
        for name, arr in result.best_params.items():
            assert loaded.params[name].dtype == np.float32
            np.testing.assert_array_equal(loaded.params[name], arr)
