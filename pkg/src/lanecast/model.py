"""Two-stream convolutional forecaster and its single-stream ablation.

Speed and volume windows pass through separate stacks of three valid 2x2
convolutions with Relu. The flattened stream outputs get dropout, are
concatenated, pushed through one hidden dense layer with Relu and dropout,
and a linear head emits next-step speeds and volumes side by side (speeds
first). The single-stream variant keeps the identical topology minus the
volume stream and the concatenation; its head emits speeds only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .fileio import atomic_write_text
from .layers import (
    DenseParams,
    FilterBank,
    conv2d_backward,
    conv2d_valid,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    relu,
)
from .pipeline import CorridorShape, NormalizationParams

BUNDLE_FORMAT = "lane-speed-model"
BUNDLE_SCHEMA_VERSION = 1

NUM_CONV_LAYERS = 3


@dataclass(frozen=True)
class ArchitectureConfig:
    """Layer widths, dropout ratios and initialization seed for one model."""

    shape: CorridorShape
    filters_per_layer: tuple[int, int, int] = (32, 32, 32)
    filter_size: tuple[int, int] = (2, 2)
    fc_hidden: int = 256
    dropout_conv: float = 0.5
    dropout_fc: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "filters_per_layer", tuple(int(f) for f in self.filters_per_layer))
        object.__setattr__(self, "filter_size", tuple(int(f) for f in self.filter_size))
        if len(self.filters_per_layer) != NUM_CONV_LAYERS:
            raise ConfigError(
                f"expected {NUM_CONV_LAYERS} filter counts, got {self.filters_per_layer}"
            )
        if any(f < 1 for f in self.filters_per_layer):
            raise ConfigError(f"filter counts must be >= 1, got {self.filters_per_layer}")
        if len(self.filter_size) != 2 or any(f < 1 for f in self.filter_size):
            raise ConfigError(f"filter size must be two positive ints, got {self.filter_size}")
        if self.fc_hidden < 1:
            raise ConfigError(f"fc_hidden must be >= 1, got {self.fc_hidden}")
        for name, ratio in (("dropout_conv", self.dropout_conv), ("dropout_fc", self.dropout_fc)):
            if not 0.0 <= ratio < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {ratio}")
        rows, cols = self.conv_map_shapes()[-1]
        if rows < 1 or cols < 1:
            raise ConfigError(
                f"conv stack does not fit: {self.shape.detectors}x{self.shape.steps} input "
                f"shrinks to {rows}x{cols} after {NUM_CONV_LAYERS} valid "
                f"{self.filter_size[0]}x{self.filter_size[1]} convolutions"
            )

    def conv_map_shapes(self) -> list[tuple[int, int]]:
        """(rows, cols) of each conv layer's output, via valid-conv shape algebra."""
        fr, fc = self.filter_size
        rows, cols = self.shape.detectors, self.shape.steps
        shapes = []
        for _ in range(NUM_CONV_LAYERS):
            rows, cols = rows - fr + 1, cols - fc + 1
            shapes.append((rows, cols))
        return shapes

    @property
    def flat_size(self) -> int:
        rows, cols = self.conv_map_shapes()[-1]
        return rows * cols * self.filters_per_layer[-1]

    @property
    def targets_per_quantity(self) -> int:
        return self.shape.detectors * self.shape.lanes


@dataclass
class ModelParams:
    """Every learnable array, in optimizer/serialization order."""

    speed_stream: list[FilterBank]
    volume_stream: list[FilterBank] | None
    fusion: DenseParams
    output: DenseParams

    def arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        streams = [("speed", self.speed_stream)]
        if self.volume_stream is not None:
            streams.append(("volume", self.volume_stream))
        for prefix, banks in streams:
            for idx, bank in enumerate(banks, start=1):
                out[f"{prefix}_conv{idx}.weights"] = bank.weights
                out[f"{prefix}_conv{idx}.biases"] = bank.biases
        out["fusion.weights"] = self.fusion.weights
        out["fusion.biases"] = self.fusion.biases
        out["output.weights"] = self.output.weights
        out["output.biases"] = self.output.biases
        return out

    def count(self) -> int:
        return sum(a.size for a in self.arrays().values())


class PredictionPair(NamedTuple):
    """Normalized next-step predictions; volume is None for speed-only models."""

    speed: np.ndarray
    volume: np.ndarray | None


# -- initialization -----------------------------------------------------------


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _glorot_uniform(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _init_stream(rng, config: ArchitectureConfig) -> list[FilterBank]:
    banks = []
    in_channels = config.shape.lanes
    fr, fc = config.filter_size
    for num_filters in config.filters_per_layer:
        weights = _he_uniform(rng, (num_filters, fr, fc, in_channels), fr * fc * in_channels)
        banks.append(FilterBank(weights, np.zeros(num_filters)))
        in_channels = num_filters
    return banks


def init_params(config: ArchitectureConfig, *, volume_stream: bool = True) -> ModelParams:
    """He-uniform conv and hidden dense weights, Glorot-uniform linear head,
    zero biases; draw order is fixed for reproducibility."""
    rng = np.random.default_rng(config.seed)
    speed = _init_stream(rng, config)
    volume = _init_stream(rng, config) if volume_stream else None
    fused_in = config.flat_size * (2 if volume_stream else 1)
    out_dim = config.targets_per_quantity * (2 if volume_stream else 1)
    fusion = DenseParams(
        _he_uniform(rng, (config.fc_hidden, fused_in), fused_in), np.zeros(config.fc_hidden)
    )
    output = DenseParams(
        _glorot_uniform(rng, (out_dim, config.fc_hidden), config.fc_hidden, out_dim),
        np.zeros(out_dim),
    )
    return ModelParams(speed, volume, fusion, output)


def _expected_shapes(config: ArchitectureConfig, volume_stream: bool) -> dict[str, tuple]:
    fr, fc = config.filter_size
    shapes: dict[str, tuple] = {}
    prefixes = ["speed", "volume"] if volume_stream else ["speed"]
    for prefix in prefixes:
        in_channels = config.shape.lanes
        for idx, num_filters in enumerate(config.filters_per_layer, start=1):
            shapes[f"{prefix}_conv{idx}.weights"] = (num_filters, fr, fc, in_channels)
            shapes[f"{prefix}_conv{idx}.biases"] = (num_filters,)
            in_channels = num_filters
    fused_in = config.flat_size * (2 if volume_stream else 1)
    out_dim = config.targets_per_quantity * (2 if volume_stream else 1)
    shapes["fusion.weights"] = (config.fc_hidden, fused_in)
    shapes["fusion.biases"] = (config.fc_hidden,)
    shapes["output.weights"] = (out_dim, config.fc_hidden)
    shapes["output.biases"] = (out_dim,)
    return shapes


def _validate_params(params: ModelParams, config: ArchitectureConfig, volume_stream: bool):
    expected = _expected_shapes(config, volume_stream)
    actual = params.arrays()
    if set(actual) != set(expected):
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        raise ShapeError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if actual[name].shape != shape:
            raise ShapeError(
                f"parameter {name!r} has shape {actual[name].shape}, expected {shape}"
            )


# -- forward/backward ---------------------------------------------------------


@dataclass
class _StreamCache:
    x: np.ndarray
    pre: list[np.ndarray]   # conv pre-activations
    act: list[np.ndarray]   # relu outputs
    mask: np.ndarray | None
    flat_dim: int


@dataclass
class _ModelCache:
    streams: tuple
    fused: np.ndarray
    fusion_pre: np.ndarray
    fusion_dropped: np.ndarray
    fusion_mask: np.ndarray | None
    batch: int

    @property
    def masks(self) -> dict:
        """Dropout masks of this pass, replayable via forward(..., masks=...)."""
        out = {"fusion": self.fusion_mask}
        for name, cache in zip(("speed", "volume"), self.streams):
            if cache is not None:
                out[name] = cache.mask
        return out


def _stream_forward(x, banks, ratio, mode, rng, mask):
    pre, act = [], []
    current = x
    for bank in banks:
        z = conv2d_valid(current, bank)
        current = relu(z)
        pre.append(z)
        act.append(current)
    flat = current.reshape(current.shape[0], -1)
    dropped, mask = dropout_forward(flat, ratio, mode, rng, mask)
    return dropped, _StreamCache(x=x, pre=pre, act=act, mask=mask, flat_dim=flat.shape[1])


def _stream_backward(cache: _StreamCache, banks, grad_flat):
    g = dropout_backward(grad_flat, cache.mask)
    g = g.reshape(cache.act[-1].shape)
    bank_grads = {}
    for idx in range(len(banks) - 1, -1, -1):
        g = np.where(cache.pre[idx] > 0.0, g, 0.0)
        below = cache.act[idx - 1] if idx > 0 else cache.x
        gx, gbank = conv2d_backward(below, banks[idx], g, input_grad=idx > 0)
        bank_grads[idx] = gbank
        g = gx
    return bank_grads


class TwoStreamModel:
    """Joint speed + volume forecaster with concatenation fusion."""

    kind = "two_stream"
    uses_volume = True

    def __init__(self, config: ArchitectureConfig, params: ModelParams | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config, volume_stream=True)
        _validate_params(self.params, config, volume_stream=True)

    def _check_input(self, x, what):
        x = np.asarray(x, dtype=np.float64)
        shape = self.config.shape
        if x.ndim != 4 or x.shape[1:] != (shape.detectors, shape.steps, shape.lanes):
            raise ShapeError(
                f"{what} must be (batch, {shape.detectors}, {shape.steps}, {shape.lanes}), "
                f"got {x.shape}"
            )
        return x

    def forward_batch(self, speed_x, volume_x, *, mode="infer", rng=None, masks=None):
        """Returns (pred_speed, pred_volume, cache); cache is None in infer mode.

        Dropout draws from `rng` in train mode; pass `masks` (from a previous
        cache) instead to replay a pass with frozen drop patterns.
        """
        speed_x = self._check_input(speed_x, "speed input")
        volume_x = self._check_input(volume_x, "volume input")
        fixed = masks or {}
        speed_out, speed_cache = _stream_forward(
            speed_x, self.params.speed_stream, self.config.dropout_conv, mode, rng, fixed.get("speed")
        )
        volume_out, volume_cache = _stream_forward(
            volume_x, self.params.volume_stream, self.config.dropout_conv, mode, rng, fixed.get("volume")
        )
        fused = np.concatenate([speed_out, volume_out], axis=1)
        fusion_pre = dense_forward(fused, self.params.fusion)
        fusion_act = relu(fusion_pre)
        fusion_dropped, fusion_mask = dropout_forward(
            fusion_act, self.config.dropout_fc, mode, rng, fixed.get("fusion")
        )
        out = dense_forward(fusion_dropped, self.params.output)
        n = self.config.targets_per_quantity
        if mode != "train":
            return out[:, :n], out[:, n:], None
        cache = _ModelCache(
            streams=(speed_cache, volume_cache),
            fused=fused,
            fusion_pre=fusion_pre,
            fusion_dropped=fusion_dropped,
            fusion_mask=fusion_mask,
            batch=speed_x.shape[0],
        )
        return out[:, :n], out[:, n:], cache

    def predict_batch(self, speed_x, volume_x):
        pred_u, pred_q, _ = self.forward_batch(speed_x, volume_x, mode="infer")
        return pred_u, pred_q

    def forward(self, speed_x, volume_x, *, mode="infer", rng=None):
        """Single-sample forward: returns (PredictionPair, cache)."""
        pred_u, pred_q, cache = self.forward_batch(
            np.asarray(speed_x)[np.newaxis], np.asarray(volume_x)[np.newaxis], mode=mode, rng=rng
        )
        return PredictionPair(pred_u[0], pred_q[0]), cache

    def backward_batch(self, cache, grad_speed, grad_volume):
        """Exact gradients of every parameter array given output gradients."""
        if cache is None:
            raise ShapeError("backward needs the cache from a train-mode forward")
        n = self.config.targets_per_quantity
        grad_speed = np.asarray(grad_speed, dtype=np.float64)
        grad_volume = np.asarray(grad_volume, dtype=np.float64)
        if grad_speed.shape != (cache.batch, n) or grad_volume.shape != (cache.batch, n):
            raise ShapeError(
                f"output gradients must each be ({cache.batch}, {n}), "
                f"got {grad_speed.shape} and {grad_volume.shape}"
            )
        grad_out = np.concatenate([grad_speed, grad_volume], axis=1)
        grad_dropped, gw_out, gb_out = dense_backward(cache.fusion_dropped, self.params.output, grad_out)
        grad_act = dropout_backward(grad_dropped, cache.fusion_mask)
        grad_pre = np.where(cache.fusion_pre > 0.0, grad_act, 0.0)
        grad_fused, gw_fus, gb_fus = dense_backward(cache.fused, self.params.fusion, grad_pre)
        speed_cache, volume_cache = cache.streams
        split = speed_cache.flat_dim
        speed_grads = _stream_backward(speed_cache, self.params.speed_stream, grad_fused[:, :split])
        volume_grads = _stream_backward(volume_cache, self.params.volume_stream, grad_fused[:, split:])
        grads: dict[str, np.ndarray] = {}
        for prefix, bank_grads in (("speed", speed_grads), ("volume", volume_grads)):
            for idx, gbank in bank_grads.items():
                grads[f"{prefix}_conv{idx + 1}.weights"] = gbank.weights
                grads[f"{prefix}_conv{idx + 1}.biases"] = gbank.biases
        grads["fusion.weights"] = gw_fus
        grads["fusion.biases"] = gb_fus
        grads["output.weights"] = gw_out
        grads["output.biases"] = gb_out
        return grads

    def param_arrays(self) -> dict[str, np.ndarray]:
        return self.params.arrays()

    def param_count(self) -> int:
        return self.params.count()


class SingleStreamModel:
    """Speed-only ablation: one conv stream, no concatenation, speed head."""

    kind = "single_stream"
    uses_volume = False

    def __init__(self, config: ArchitectureConfig, params: ModelParams | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config, volume_stream=False)
        _validate_params(self.params, config, volume_stream=False)

    _check_input = TwoStreamModel._check_input

    def forward_batch(self, speed_x, volume_x=None, *, mode="infer", rng=None, masks=None):
        """volume_x is accepted for interface parity and ignored."""
        speed_x = self._check_input(speed_x, "speed input")
        fixed = masks or {}
        stream_out, stream_cache = _stream_forward(
            speed_x, self.params.speed_stream, self.config.dropout_conv, mode, rng, fixed.get("speed")
        )
        fusion_pre = dense_forward(stream_out, self.params.fusion)
        fusion_act = relu(fusion_pre)
        fusion_dropped, fusion_mask = dropout_forward(
            fusion_act, self.config.dropout_fc, mode, rng, fixed.get("fusion")
        )
        out = dense_forward(fusion_dropped, self.params.output)
        if mode != "train":
            return out, None, None
        cache = _ModelCache(
            streams=(stream_cache, None),
            fused=stream_out,
            fusion_pre=fusion_pre,
            fusion_dropped=fusion_dropped,
            fusion_mask=fusion_mask,
            batch=speed_x.shape[0],
        )
        return out, None, cache

    def predict_batch(self, speed_x, volume_x=None):
        pred_u, _, _ = self.forward_batch(speed_x, mode="infer")
        return pred_u, None

    def forward(self, speed_x, volume_x=None, *, mode="infer", rng=None):
        pred_u, _, cache = self.forward_batch(np.asarray(speed_x)[np.newaxis], mode=mode, rng=rng)
        return PredictionPair(pred_u[0], None), cache

    def backward_batch(self, cache, grad_speed, grad_volume=None):
        if cache is None:
            raise ShapeError("backward needs the cache from a train-mode forward")
        if grad_volume is not None:
            raise ShapeError("single-stream model has no volume output")
        n = self.config.targets_per_quantity
        grad_speed = np.asarray(grad_speed, dtype=np.float64)
        if grad_speed.shape != (cache.batch, n):
            raise ShapeError(
                f"output gradient must be ({cache.batch}, {n}), got {grad_speed.shape}"
            )
        grad_dropped, gw_out, gb_out = dense_backward(cache.fusion_dropped, self.params.output, grad_speed)
        grad_act = dropout_backward(grad_dropped, cache.fusion_mask)
        grad_pre = np.where(cache.fusion_pre > 0.0, grad_act, 0.0)
        grad_fused, gw_fus, gb_fus = dense_backward(cache.fused, self.params.fusion, grad_pre)
        stream_cache, _ = cache.streams
        speed_grads = _stream_backward(stream_cache, self.params.speed_stream, grad_fused)
        grads: dict[str, np.ndarray] = {}
        for idx, gbank in speed_grads.items():
            grads[f"speed_conv{idx + 1}.weights"] = gbank.weights
            grads[f"speed_conv{idx + 1}.biases"] = gbank.biases
        grads["fusion.weights"] = gw_fus
        grads["fusion.biases"] = gb_fus
        grads["output.weights"] = gw_out
        grads["output.biases"] = gb_out
        return grads

    param_arrays = TwoStreamModel.param_arrays
    param_count = TwoStreamModel.param_count


def build_single_stream(config: ArchitectureConfig) -> SingleStreamModel:
    return SingleStreamModel(config)


# -- persistence baseline -------------------------------------------------------


def persistence_baseline(speed_x) -> np.ndarray:
    """Predict that the next step equals the newest observed column,
    rearranged to the detector-major output layout."""
    x = np.asarray(speed_x, dtype=np.float64)
    if x.ndim == 3:
        return x[:, -1, :].reshape(-1)
    if x.ndim == 4:
        return x[:, :, -1, :].reshape(x.shape[0], -1)
    raise ShapeError(f"expected a 3-d or 4-d tensor, got shape {x.shape}")


class PersistenceModel:
    """Parameterless floor: repeats the last observation, speeds and volumes."""

    kind = "persistence"
    uses_volume = True

    def predict_batch(self, speed_x, volume_x):
        pred_q = persistence_baseline(volume_x) if volume_x is not None else None
        return persistence_baseline(speed_x), pred_q


# -- bundle serialization ---------------------------------------------------------

_MODEL_KINDS = {"two_stream": TwoStreamModel, "single_stream": SingleStreamModel}


def save_bundle(path, model, norm: NormalizationParams) -> None:
    """Write a model + normalization bundle as one JSON document.

    Arrays are stored as shape-annotated row-major lists; floats use the
    shortest round-trip decimal form, so a save/load cycle is lossless at
    double precision and repeated saves are byte-identical.
    """
    if model.kind not in _MODEL_KINDS:
        raise ConfigError(f"cannot serialize model kind {model.kind!r}")
    shape = model.config.shape
    doc = {
        "format": BUNDLE_FORMAT,
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "kind": model.kind,
        "corridor": {
            "detectors": shape.detectors,
            "steps": shape.steps,
            "lanes": shape.lanes,
            "interval": shape.interval,
        },
        "architecture": {
            "filters_per_layer": list(model.config.filters_per_layer),
            "filter_size": list(model.config.filter_size),
            "fc_hidden": model.config.fc_hidden,
            "dropout_conv": model.config.dropout_conv,
            "dropout_fc": model.config.dropout_fc,
            "seed": model.config.seed,
        },
        "normalization": {
            "speed_min": norm.speed_min,
            "speed_max": norm.speed_max,
            "volume_min": norm.volume_min,
            "volume_max": norm.volume_max,
        },
        "params": {
            name: {"shape": list(array.shape), "data": array.reshape(-1).tolist()}
            for name, array in model.param_arrays().items()
        },
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def _require(doc: dict, key: str, path):
    if key not in doc:
        raise DataError(f"bundle {path} is missing required key {key!r}")
    return doc[key]


def load_bundle(path):
    """Read a bundle back; returns (model, normalization)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read bundle {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt bundle {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != BUNDLE_FORMAT:
        raise DataError(f"bundle {path} is not a {BUNDLE_FORMAT!r} document")
    if doc.get("schema_version") != BUNDLE_SCHEMA_VERSION:
        raise DataError(
            f"bundle {path} has schema version {doc.get('schema_version')!r}, "
            f"expected {BUNDLE_SCHEMA_VERSION}"
        )
    kind = _require(doc, "kind", path)
    if kind not in _MODEL_KINDS:
        raise DataError(f"bundle {path} has unknown model kind {kind!r}")
    try:
        corridor = CorridorShape(**_require(doc, "corridor", path))
        config = ArchitectureConfig(shape=corridor, **_require(doc, "architecture", path))
        norm_doc = _require(doc, "normalization", path)
        norm = NormalizationParams(**norm_doc)
    except (ConfigError, DataError, TypeError) as exc:
        raise DataError(f"bundle {path} has invalid configuration: {exc}") from exc
    expected = _expected_shapes(config, volume_stream=kind == "two_stream")
    stored = _require(doc, "params", path)
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise DataError(f"bundle {path} parameter mismatch: missing {missing}, unexpected {extra}")
    arrays = {}
    for name, spec in stored.items():
        if not isinstance(spec, dict) or "shape" not in spec or "data" not in spec:
            raise DataError(f"bundle {path}: parameter {name!r} needs 'shape' and 'data'")
        shape = tuple(spec["shape"])
        if shape != expected[name]:
            raise DataError(
                f"bundle {path}: parameter {name!r} has shape {shape}, expected {expected[name]}"
            )
        try:
            values = np.asarray(spec["data"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"bundle {path}: parameter {name!r} data is not numeric: {exc}") from exc
        if values.size != int(np.prod(shape)):
            raise DataError(f"bundle {path}: parameter {name!r} data length mismatch")
        arrays[name] = values.reshape(shape)
    model_cls = _MODEL_KINDS[kind]
    model = model_cls(config)
    for name, target in model.param_arrays().items():
        target[...] = arrays[name]
    return model, norm
