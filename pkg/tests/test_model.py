import struct

import numpy as np
import pytest

from derm.errors import (
    MissingWeightError,
    ShapeError,
    TruncatedPayloadError,
    ValidationError,
    WeightFormatError,
    WeightShapeError,
)
from derm.model import (
    ModelConfig,
    backbone_features,
    build_mobilenet,
    forward,
    head_forward,
    load_weights,
    model_summary,
    save_weights,
    set_trainable_boundary,
    with_weights,
)
from derm.tensor import Tensor, tensor_allclose

SMALL = ModelConfig(input_size=32, width_multiplier=0.25)


@pytest.fixture(scope="module")
def small_model():
    return build_mobilenet(SMALL, np.random.default_rng(7))


def batch_of(n, size, seed=0, value=None):
    rng = np.random.default_rng(seed)
    if value is None:
        arr = rng.uniform(-1, 1, (n, size, size, 3)).astype(np.float32)
    else:
        arr = np.full((n, size, size, 3), value, dtype=np.float32)
    return Tensor(arr)


class TestBuild:
    def test_default_head_shape(self):
        model = build_mobilenet(ModelConfig(), np.random.default_rng(0))
        assert model.config.feature_width == 1024
        assert model.weights["head/dense/kernel"].shape == (1024, 7)
        assert model.weights["head/dense/bias"].shape == (7,)

    def test_quarter_width_stem(self):
        model = build_mobilenet(ModelConfig(width_multiplier=0.25), np.random.default_rng(0))
        assert model.weights["stem/conv/kernel"].shape == (3, 3, 3, 8)
        assert model.config.feature_width == 256

    def test_two_class_head(self):
        model = build_mobilenet(ModelConfig(num_classes=2), np.random.default_rng(0))
        assert model.weights["head/dense/kernel"].shape == (1024, 2)

    def test_bn_identity_init(self, small_model):
        assert np.all(small_model.weights["stem/bn/gamma"].array == 1.0)
        assert np.all(small_model.weights["stem/bn/beta"].array == 0.0)
        assert np.all(small_model.weights["stem/bn/variance"].array == 1.0)

    def test_seeded_init_deterministic(self):
        a = build_mobilenet(SMALL, np.random.default_rng(3))
        b = build_mobilenet(SMALL, np.random.default_rng(3))
        for name in a.weights:
            assert tensor_allclose(a.weights[name], b.weights[name], 0, 0)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            ModelConfig(input_size=100)
        with pytest.raises(ValidationError):
            ModelConfig(num_classes=1)
        with pytest.raises(ValidationError):
            ModelConfig(dropout_rate=1.0)
        with pytest.raises(ValidationError):
            ModelConfig(activation="gelu")
        with pytest.raises(ValidationError):
            ModelConfig(width_multiplier=0.0)


class TestForward:
    def test_valid_distribution(self, small_model):
        p = forward(small_model, batch_of(3, 32))
        assert p.shape == (3, 7)
        np.testing.assert_allclose(p.array.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(p.array > 0)

    def test_identical_rows_identical_outputs(self, small_model):
        one = batch_of(1, 32, seed=5)
        two = Tensor(np.concatenate([one.array, one.array], axis=0))
        p = forward(small_model, two).array
        assert np.array_equal(p[0], p[1])

    def test_deterministic_inference(self, small_model):
        x = batch_of(2, 32, seed=9)
        a = forward(small_model, x)
        b = forward(small_model, x)
        assert np.array_equal(a.array, b.array)

    def test_wrong_input_size(self, small_model):
        with pytest.raises(ShapeError):
            forward(small_model, batch_of(1, 64))

    def test_wrong_channel_count(self, small_model):
        bad = Tensor(np.zeros((1, 32, 32, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            forward(small_model, bad)

    def test_backbone_plus_head_equals_forward(self, small_model):
        x = batch_of(2, 32, seed=11)
        feats = backbone_features(small_model, x)
        assert feats.shape == (2, 256)
        p = head_forward(small_model, feats)
        assert np.array_equal(p.array, forward(small_model, x).array)

    def test_training_dropout_differs_but_normalizes(self, small_model):
        x = batch_of(2, 32, seed=13)
        p1 = forward(small_model, x, training=True, rng=np.random.default_rng(1))
        p2 = forward(small_model, x)
        assert not np.array_equal(p1.array, p2.array)
        np.testing.assert_allclose(p1.array.sum(axis=1), 1.0, atol=1e-6)

    def test_relu_variant_runs(self):
        model = build_mobilenet(
            ModelConfig(input_size=32, width_multiplier=0.25, activation="relu"),
            np.random.default_rng(0),
        )
        p = forward(model, batch_of(1, 32))
        np.testing.assert_allclose(p.array.sum(axis=1), 1.0, atol=1e-6)


class TestSummary:
    def test_kind_census(self, small_model):
        summary = model_summary(small_model)
        kinds = summary.kind_counts
        assert kinds["GlobalAveragePooling"] == 1
        assert kinds["Dropout"] == 1
        assert kinds["Dense"] == 1
        assert kinds["DepthwiseConv2D"] == 13
        assert kinds["Conv2D"] == 14  # stem + 13 pointwise
        assert kinds["BatchNormalization"] == 27
        assert kinds["ReLU6"] == 27

    def test_param_totals_consistent(self, small_model):
        summary = model_summary(small_model)
        assert sum(l.param_count for l in summary.layers) == summary.total_params

    def test_trainable_count_default_config(self):
        model = build_mobilenet(ModelConfig(), np.random.default_rng(0))
        summary = model_summary(model)
        assert summary.trainable_params == 1024 * 7 + 7

    def test_spatial_plan(self, small_model):
        summary = model_summary(small_model)
        by_name = {l.name: l for l in summary.layers}
        assert by_name["stem/conv"].output_shape == (16, 16, 8)
        assert by_name["block13/pw"].output_shape == (1, 1, 256)
        assert by_name["gap"].output_shape == (256,)
        assert by_name["head/dense"].output_shape == (7,)

    def test_default_spatial_contract(self):
        model = build_mobilenet(ModelConfig(), np.random.default_rng(0))
        summary = model_summary(model)
        by_name = {l.name: l for l in summary.layers}
        assert by_name["block13/pw_act"].output_shape == (7, 7, 1024)

    def test_render_mentions_totals(self, small_model):
        text = model_summary(small_model).render()
        assert "total params" in text and "trainable params" in text


class TestTrainableBoundary:
    def test_head_only(self, small_model):
        m = set_trainable_boundary(small_model, "head_only")
        assert m.trainable_weight_names() == ("head/dense/kernel", "head/dense/bias")

    def test_all_frozen(self, small_model):
        m = set_trainable_boundary(small_model, "all_frozen")
        assert m.trainable_weight_names() == ()

    def test_bad_boundary(self, small_model):
        with pytest.raises(ValidationError):
            set_trainable_boundary(small_model, "everything")


class TestWithWeights:
    def test_replaces_named_tensor(self, small_model):
        new_bias = Tensor(np.arange(7, dtype=np.float32))
        m = with_weights(small_model, {"head/dense/bias": new_bias})
        assert np.array_equal(m.weights["head/dense/bias"].array, new_bias.array)
        assert m.weights["stem/conv/kernel"] is small_model.weights["stem/conv/kernel"]

    def test_rejects_unknown_name(self, small_model):
        with pytest.raises(MissingWeightError):
            with_weights(small_model, {"nope": Tensor(np.zeros(1, dtype=np.float32))})

    def test_rejects_shape_change(self, small_model):
        with pytest.raises(WeightShapeError):
            with_weights(small_model, {"head/dense/bias": Tensor(np.zeros(3, dtype=np.float32))})


class TestWeightFile:
    def test_round_trip_bit_identical(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        loaded = load_weights(path, SMALL)
        assert set(loaded.weights) == set(small_model.weights)
        for name, t in small_model.weights.items():
            assert tensor_allclose(loaded.weights[name], t, 0, 0)

    def test_round_trip_other_config(self, tmp_path):
        config = ModelConfig(input_size=64, width_multiplier=0.5, num_classes=3, num_blocks=4)
        model = build_mobilenet(config, np.random.default_rng(1))
        path = tmp_path / "m.dwsn"
        save_weights(model, path)
        loaded = load_weights(path, config)
        for name, t in model.weights.items():
            assert tensor_allclose(loaded.weights[name], t, 0, 0)

    def test_bad_magic(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError):
            load_weights(path, SMALL)

    def test_bad_version(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError, match="version"):
            load_weights(path, SMALL)

    def test_truncated_payload(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-100])
        with pytest.raises(TruncatedPayloadError):
            load_weights(path, SMALL)

    def test_missing_tensor_named(self, small_model, tmp_path):
        import json

        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        blob = path.read_bytes()
        (header_len,) = struct.unpack_from("<Q", blob, 8)
        records = json.loads(blob[16 : 16 + header_len])
        records = [r for r in records if r["name"] != "head/dense/bias"]
        header = json.dumps(records, separators=(",", ":")).encode()
        patched = blob[:8] + struct.pack("<Q", len(header)) + header + blob[16 + header_len:]
        path.write_bytes(patched)
        with pytest.raises(MissingWeightError, match="head/dense/bias"):
            load_weights(path, SMALL)

    def test_shape_mismatch_across_configs(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        with pytest.raises(WeightShapeError):
            load_weights(path, ModelConfig(input_size=32, width_multiplier=0.5))

    def test_garbage_header(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        blob = bytearray(path.read_bytes())
        blob[16:20] = b"\xff\xfe\xfd\xfc"
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError):
            load_weights(path, SMALL)

    def test_loaded_model_same_outputs(self, small_model, tmp_path):
        path = tmp_path / "m.dwsn"
        save_weights(small_model, path)
        loaded = load_weights(path, SMALL)
        x = batch_of(1, 32, seed=21)
        assert np.array_equal(forward(small_model, x).array, forward(loaded, x).array)
