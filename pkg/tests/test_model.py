import json

import numpy as np
import pytest

from lanecast.errors import ConfigError, DataError, ShapeError
from lanecast.gradcheck import gradient_check
from lanecast.losses import composite_loss
from lanecast.model import (
    ArchitectureConfig,
    PersistenceModel,
    SingleStreamModel,
    TwoStreamModel,
    build_single_stream,
    init_params,
    load_bundle,
    persistence_baseline,
    save_bundle,
)
from lanecast.pipeline import CorridorShape, NormalizationParams


def toy_config(seed=0, **overrides):
    shape = CorridorShape(detectors=4, steps=5, lanes=2)
    defaults = dict(filters_per_layer=(4, 4, 4), fc_hidden=16, seed=seed)
    defaults.update(overrides)
    return ArchitectureConfig(shape=shape, **defaults)


def corridor_config(seed=0):
    shape = CorridorShape(detectors=10, steps=8, lanes=4)
    return ArchitectureConfig(shape=shape, seed=seed)


def random_batch(config, batch=3, seed=1):
    rng = np.random.default_rng(seed)
    k, n, c = config.shape.detectors, config.shape.steps, config.shape.lanes
    return rng.random((batch, k, n, c)), rng.random((batch, k, n, c))


class TestArchitecture:
    def test_shape_chain_at_corridor_scale(self):
        config = corridor_config()
        assert config.conv_map_shapes() == [(9, 7), (8, 6), (7, 5)]
        assert config.flat_size == 7 * 5 * 32
        assert config.targets_per_quantity == 40

    def test_conv_stack_must_fit(self):
        shape = CorridorShape(detectors=3, steps=8, lanes=1)
        with pytest.raises(ConfigError, match="does not fit"):
            ArchitectureConfig(shape=shape)

    def test_invalid_dropout_rejected(self):
        with pytest.raises(ConfigError):
            toy_config(dropout_conv=1.0)

    def test_stream_initializers_share_distribution(self):
        params = init_params(toy_config(seed=3))
        fr, fc = 2, 2
        in_channels = 2
        for bank_u, bank_q in zip(params.speed_stream, params.volume_stream):
            bound = np.sqrt(6.0 / (fr * fc * in_channels))
            assert bank_u.weights.shape == bank_q.weights.shape
            for bank in (bank_u, bank_q):
                assert np.abs(bank.weights).max() <= bound
                assert (bank.biases == 0.0).all()
            in_channels = bank_u.num_filters


class TestForward:
    def test_zero_params_zero_output(self):
        config = toy_config()
        model = TwoStreamModel(config)
        for array in model.param_arrays().values():
            array[...] = 0.0
        xu, xq = random_batch(config)
        pred_u, pred_q = model.predict_batch(xu, xq)
        assert (pred_u == 0.0).all() and (pred_q == 0.0).all()

    def test_output_lengths(self):
        config = corridor_config()
        model = TwoStreamModel(config)
        xu, xq = random_batch(config, batch=2)
        pred_u, pred_q = model.predict_batch(xu, xq)
        assert pred_u.shape == (2, 40)
        assert pred_q.shape == (2, 40)

    def test_infer_mode_deterministic(self):
        config = toy_config(seed=5)
        model = TwoStreamModel(config)
        xu, xq = random_batch(config)
        first = model.predict_batch(xu, xq)
        second = model.predict_batch(xu, xq)
        assert np.array_equal(first[0], second[0])
        assert np.array_equal(first[1], second[1])

    def test_single_sample_wrapper(self):
        config = toy_config(seed=6)
        model = TwoStreamModel(config)
        xu, xq = random_batch(config, batch=1)
        pair, cache = model.forward(xu[0], xq[0])
        assert cache is None
        batched = model.predict_batch(xu, xq)
        assert np.array_equal(pair.speed, batched[0][0])
        assert np.array_equal(pair.volume, batched[1][0])

    def test_wrong_shape_rejected(self):
        model = TwoStreamModel(toy_config())
        with pytest.raises(ShapeError):
            model.predict_batch(np.zeros((1, 3, 5, 2)), np.zeros((1, 3, 5, 2)))

    def test_train_mode_needs_rng_for_dropout(self):
        config = toy_config()
        model = TwoStreamModel(config)
        xu, xq = random_batch(config)
        with pytest.raises(ValueError):
            model.forward_batch(xu, xq, mode="train")


class TestBackward:
    def test_zero_upstream_gradient(self):
        config = toy_config(seed=7)
        model = TwoStreamModel(config)
        xu, xq = random_batch(config)
        rng = np.random.default_rng(0)
        _, _, cache = model.forward_batch(xu, xq, mode="train", rng=rng)
        zeros = np.zeros((3, config.targets_per_quantity))
        grads = model.backward_batch(cache, zeros, zeros)
        assert all((g == 0.0).all() for g in grads.values())

    def test_full_model_gradient_check(self):
        config = toy_config(seed=8)
        model = TwoStreamModel(config)
        rng = np.random.default_rng(2)
        xu = rng.random((1, 4, 5, 2))
        xq = rng.random((1, 4, 5, 2))
        yu = rng.random((1, 8))
        yq = rng.random((1, 8))
        pred_u, pred_q, cache = model.forward_batch(xu, xq, mode="train", rng=rng)
        masks = cache.masks
        _, grad_u, grad_q = composite_loss(pred_u, pred_q, yu, yq, 0.1)
        grads = model.backward_batch(cache, grad_u, grad_q)

        def loss_fn():
            pu, pq, _ = model.forward_batch(xu, xq, mode="train", masks=masks)
            return composite_loss(pu, pq, yu, yq, 0.1)[0]

        report = gradient_check(
            loss_fn, model.param_arrays(), grads,
            step=1e-6, tolerance=1e-5,
            rng=np.random.default_rng(3), max_entries=40,
        )
        assert report.passed, report.summary()

    def test_zero_weight_detaches_volume_gradient(self):
        config = toy_config(seed=9)
        model = TwoStreamModel(config)
        xu, xq = random_batch(config, batch=2)
        rng = np.random.default_rng(1)
        yu = rng.random((2, 8))
        yq = rng.random((2, 8))
        pred_u, pred_q, cache = model.forward_batch(xu, xq, mode="train", rng=rng)
        _, grad_u, grad_q = composite_loss(pred_u, pred_q, yu, yq, 0.0)
        assert (grad_q == 0.0).all()
        # volume half of the head's weight rows receives gradient only
        # through the volume loss, so it must be exactly zero here
        grads = model.backward_batch(cache, grad_u, grad_q)
        n = config.targets_per_quantity
        assert (grads["output.weights"][n:, :] == 0.0).all()
        assert (grads["output.biases"][n:] == 0.0).all()
        assert not (grads["output.weights"][:n, :] == 0.0).all()

    def test_backward_without_cache_rejected(self):
        model = TwoStreamModel(toy_config())
        with pytest.raises(ShapeError):
            model.backward_batch(None, np.zeros((1, 8)), np.zeros((1, 8)))


class TestSingleStream:
    def test_output_length_and_zero_params(self):
        config = toy_config(seed=10)
        model = build_single_stream(config)
        for array in model.param_arrays().values():
            array[...] = 0.0
        xu, _ = random_batch(config)
        pred_u, pred_q = model.predict_batch(xu)
        assert pred_u.shape == (3, config.targets_per_quantity)
        assert pred_q is None
        assert (pred_u == 0.0).all()

    def test_parameter_count_difference(self):
        config = toy_config(seed=11)
        two = TwoStreamModel(config)
        one = SingleStreamModel(config)
        flat = config.flat_size
        n = config.targets_per_quantity
        volume_stream = sum(
            b.weights.size + b.biases.size for b in two.params.volume_stream
        )
        fusion_widening = config.fc_hidden * flat
        head_widening = n * config.fc_hidden + n
        expected_diff = volume_stream + fusion_widening + head_widening
        assert two.param_count() - one.param_count() == expected_diff

    def test_analytic_parameter_count(self):
        config = toy_config(seed=12)
        model = SingleStreamModel(config)
        fr, fc = config.filter_size
        counts = 0
        in_channels = config.shape.lanes
        for f in config.filters_per_layer:
            counts += f * fr * fc * in_channels + f
            in_channels = f
        counts += config.fc_hidden * config.flat_size + config.fc_hidden
        n = config.targets_per_quantity
        counts += n * config.fc_hidden + n
        assert model.param_count() == counts

    def test_gradient_check(self):
        config = toy_config(seed=13)
        model = SingleStreamModel(config)
        rng = np.random.default_rng(4)
        xu = rng.random((1, 4, 5, 2))
        yu = rng.random((1, 8))
        from lanecast.losses import speed_loss

        pred_u, _, cache = model.forward_batch(xu, mode="train", rng=rng)
        masks = cache.masks
        _, grad_u = speed_loss(pred_u, yu)
        grads = model.backward_batch(cache, grad_u)

        def loss_fn():
            pu, _, _ = model.forward_batch(xu, mode="train", masks=masks)
            return speed_loss(pu, yu)[0]

        report = gradient_check(
            loss_fn, model.param_arrays(), grads,
            step=1e-6, tolerance=1e-5,
            rng=np.random.default_rng(5), max_entries=40,
        )
        assert report.passed, report.summary()


class TestPersistence:
    def test_constant_sample(self):
        x = np.full((3, 4, 2), 0.7)
        assert (persistence_baseline(x) == 0.7).all()

    def test_equals_last_column_layout(self):
        rng = np.random.default_rng(14)
        x = rng.random((3, 4, 2))
        assert np.array_equal(persistence_baseline(x), x[:, -1, :].reshape(-1))

    def test_model_wrapper(self):
        rng = np.random.default_rng(15)
        xu = rng.random((2, 3, 4, 2))
        xq = rng.random((2, 3, 4, 2))
        pred_u, pred_q = PersistenceModel().predict_batch(xu, xq)
        assert np.array_equal(pred_u, xu[:, :, -1, :].reshape(2, -1))
        assert np.array_equal(pred_q, xq[:, :, -1, :].reshape(2, -1))


class TestBundle:
    def norm(self):
        return NormalizationParams(0.5, 75.0, 0.0, 260.0)

    def test_round_trip_forward_bit_exact(self, tmp_path):
        config = toy_config(seed=16)
        model = TwoStreamModel(config)
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        loaded, norm = load_bundle(path)
        assert norm == self.norm()
        xu, xq = random_batch(config)
        original = model.predict_batch(xu, xq)
        restored = loaded.predict_batch(xu, xq)
        assert np.array_equal(original[0], restored[0])
        assert np.array_equal(original[1], restored[1])

    def test_single_stream_round_trip(self, tmp_path):
        config = toy_config(seed=17)
        model = SingleStreamModel(config)
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        loaded, _ = load_bundle(path)
        assert loaded.kind == "single_stream"
        xu, _ = random_batch(config)
        assert np.array_equal(model.predict_batch(xu)[0], loaded.predict_batch(xu)[0])

    def test_repeated_save_is_byte_identical(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=18))
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_bundle(a, model, self.norm())
        save_bundle(b, model, self.norm())
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=19))
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        path.write_text(path.read_text()[:1000])
        with pytest.raises(DataError, match="corrupt"):
            load_bundle(path)

    def test_missing_normalization_rejected(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=20))
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        doc = json.loads(path.read_text())
        del doc["normalization"]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="normalization"):
            load_bundle(path)

    def test_wrong_parameter_shape_rejected(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=21))
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        doc = json.loads(path.read_text())
        doc["params"]["fusion.biases"]["shape"] = [7]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="shape"):
            load_bundle(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_bundle(tmp_path / "absent.json")

    def test_parameter_entry_without_data_rejected(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=23))
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        doc = json.loads(path.read_text())
        del doc["params"]["fusion.biases"]["data"]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="'shape' and 'data'"):
            load_bundle(path)

    def test_wrong_schema_version_rejected(self, tmp_path):
        model = TwoStreamModel(toy_config(seed=22))
        path = tmp_path / "model.json"
        save_bundle(path, model, self.norm())
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="schema"):
            load_bundle(path)
