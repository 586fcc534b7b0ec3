"""The binary occupancy classifier: build, fine-tune, serialize, and run.

The network is a stack of five conv stages (conv -> maxpool -> ReLU) feeding
three fully connected layers with a two-unit head (vacant / occupied). Input
resolution and stage widths are configurable; ``desk_spec`` is the small
trainable default and ``full_spec`` the full-resolution variant.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dataset import DatasetIndex, OCCUPIED, VACANT, load_image
from .errors import (
    BadMagicError,
    ConfigError,
    DimensionError,
    DivergenceError,
    ModelFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)

MAGIC = b"PSVI"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, format version, init seed: 16 bytes

LOSS_LOG_EVERY = 10


@dataclass
class ConvStage:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    pool_window: int = 2
    pool_stride: int = 2


@dataclass
class ModelSpec:
    input_size: tuple[int, int, int]  # (height, width, channels)
    conv_stages: list[ConvStage]
    fc_sizes: list[int]
    seed: int = 0

    def validate(self):
        h, w, c = self.input_size
        if h < 1 or w < 1:
            raise ConfigError(f"input size must be positive, got {h}x{w}")
        if c != 3:
            raise ConfigError(f"input must have 3 channels, got {c}")
        if len(self.conv_stages) != 5:
            raise ConfigError(f"expected 5 conv stages, got {len(self.conv_stages)}")
        if len(self.fc_sizes) != 3:
            raise ConfigError(f"expected 3 fc sizes, got {len(self.fc_sizes)}")
        if self.fc_sizes[-1] != 2:
            raise ConfigError(f"final fc size must be 2 (binary head), got {self.fc_sizes[-1]}")
        for i, st in enumerate(self.conv_stages):
            if min(st.out_channels, st.kernel, st.stride, st.pool_window, st.pool_stride) < 1:
                raise ConfigError(f"conv stage {i} has a non-positive field: {st}")
            if st.pad < 0:
                raise ConfigError(f"conv stage {i} has negative padding")
        if any(s < 1 for s in self.fc_sizes):
            raise ConfigError("fc sizes must be positive")
        self.stage_shapes()  # raises if any stage collapses below 1x1

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, h, w) after each conv stage; ConfigError names a collapsing stage."""
        h, w, _ = self.input_size
        shapes = []
        for i, st in enumerate(self.conv_stages):
            if h + 2 * st.pad < st.kernel or w + 2 * st.pad < st.kernel:
                raise ConfigError(f"conv stage {i}: kernel {st.kernel} exceeds padded input {h}x{w}")
            h = (h + 2 * st.pad - st.kernel) // st.stride + 1
            w = (w + 2 * st.pad - st.kernel) // st.stride + 1
            if h < st.pool_window or w < st.pool_window:
                raise ConfigError(f"conv stage {i}: pool window {st.pool_window} exceeds map {h}x{w}")
            h = (h - st.pool_window) // st.pool_stride + 1
            w = (w - st.pool_window) // st.pool_stride + 1
            if h < 1 or w < 1:
                raise ConfigError(f"conv stage {i} reduces the feature map below 1x1")
            shapes.append((st.out_channels, h, w))
        return shapes

    def flat_features(self) -> int:
        c, h, w = self.stage_shapes()[-1]
        return c * h * w

    def layer_shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(weights shape, bias shape) for every layer, conv stages then fc."""
        shapes = []
        c_in = self.input_size[2]
        for st in self.conv_stages:
            shapes.append(((st.out_channels, c_in, st.kernel, st.kernel), (st.out_channels,)))
            c_in = st.out_channels
        d = self.flat_features()
        for m in self.fc_sizes:
            shapes.append(((d, m), (m,)))
            d = m
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.layer_shapes())

    def serialized_size(self) -> int:
        spec_words = 4 + 6 * len(self.conv_stages) + 1 + len(self.fc_sizes)
        return _HEADER.size + 4 * spec_words + 4 * 3 + 4 * self.param_count()


def desk_spec(input_hw: tuple[int, int] = (64, 64), seed: int = 0) -> ModelSpec:
    """Small configuration trainable on a desktop CPU."""
    channels = [8, 16, 32, 32, 64]
    kernels = [5, 3, 3, 3, 3]
    stages = [ConvStage(c, k, 1, k // 2, 2, 2) for c, k in zip(channels, kernels)]
    return ModelSpec((input_hw[0], input_hw[1], 3), stages, [128, 64, 2], seed)


def full_spec(seed: int = 0) -> ModelSpec:
    """Full-resolution configuration (224x224, first kernels 11 and 5)."""
    stages = [
        ConvStage(64, 11, 4, 5, 2, 2),
        ConvStage(256, 5, 1, 2, 2, 2),
        ConvStage(256, 3, 1, 1, 2, 2),
        ConvStage(256, 3, 1, 1, 2, 2),
        ConvStage(256, 3, 1, 1, 2, 2),
    ]
    return ModelSpec((224, 224, 3), stages, [4096, 4096, 2], seed)


@dataclass
class Model:
    spec: ModelSpec
    params: list[nn.LayerParams]  # conv stages then fc layers
    channel_means: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, np.float32))

    @property
    def conv_params(self) -> list[nn.LayerParams]:
        return self.params[: len(self.spec.conv_stages)]

    @property
    def fc_params(self) -> list[nn.LayerParams]:
        return self.params[len(self.spec.conv_stages) :]


@dataclass
class Hyperparams:
    lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 1000
    weight_decay: float = 0.0005
    batch_size: int = 128
    iterations: int = 3000
    freeze_conv: bool = True
    seed: int = 0

    def validate(self):
        if self.lr <= 0 or self.lr_decay_factor <= 0:
            raise ValidationError("learning rate and decay factor must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight decay must be non-negative")
        if self.lr_decay_every < 1 or self.batch_size < 1 or self.iterations < 1:
            raise ValidationError("decay interval, batch size and iterations must be >= 1")


@dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]]
    final_train_accuracy: float
    wall_time_s: float


@dataclass
class Prediction:
    occupied_prob: float
    label: str


def build(spec: ModelSpec) -> Model:
    """Initialize a model: fan-in-scaled normals, except a zero final layer.

    The symmetric zero head makes a fresh model output exactly 0.5 either way.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params = []
    shapes = spec.layer_shapes()
    for i, (w_shape, b_shape) in enumerate(shapes):
        if i == len(shapes) - 1:
            weights = np.zeros(w_shape, np.float32)
        else:
            fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 4 else w_shape[0]
            weights = (rng.standard_normal(w_shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        params.append(nn.LayerParams(weights, np.zeros(b_shape, np.float32)))
    return Model(spec, params)


def _bilinear_resize(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Half-pixel-centered bilinear resampling of an [H,W,C] float array."""
    h, w = img.shape[:2]
    if (h, w) == (oh, ow):
        return img
    ys = np.clip((np.arange(oh, dtype=np.float64) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow, dtype=np.float64) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)[:, None, None]
    wx = (xs - x0).astype(img.dtype)[None, :, None]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)


def preprocess(model: Model, image: np.ndarray) -> np.ndarray:
    """Decoded RGB raster -> [1,3,H,W] float32: resize, scale to [0,1], de-mean."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an RGB raster [H,W,3], got shape {image.shape}")
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ValidationError("image has a zero dimension")
    h, w, _ = model.spec.input_size
    raster = image.astype(np.float32)
    if image.dtype == np.uint8:
        raster /= 255.0
    raster = _bilinear_resize(raster, h, w)
    raster -= model.channel_means
    return np.ascontiguousarray(raster.transpose(2, 0, 1))[None]


def _conv_stack(model: Model, x: np.ndarray, record: bool = False):
    caches = []
    for st, p in zip(model.spec.conv_stages, model.conv_params):
        x_in = x
        conv_out = nn.conv2d(x, p, st.stride, st.pad)
        pooled, argmax = nn.maxpool2d(conv_out, st.pool_window, st.pool_stride)
        x = nn.relu(pooled)
        if record:
            caches.append((x_in, conv_out, argmax, pooled))
    return x, caches


def _conv_stack_backward(model: Model, caches, grad: np.ndarray):
    for st, p, (x_in, conv_out, argmax, pooled) in zip(
        reversed(model.spec.conv_stages), reversed(model.conv_params), reversed(caches)
    ):
        grad = nn.relu_backward(pooled, grad)
        grad = nn.maxpool2d_backward(argmax, grad, conv_out.shape)
        grad = nn.conv2d_backward(x_in, p, grad, st.stride, st.pad)
    return grad


def _fc_stack(model: Model, feats: np.ndarray, record: bool = False):
    x = feats
    caches = []
    last = len(model.fc_params) - 1
    for i, p in enumerate(model.fc_params):
        x_in = x
        z = nn.linear(x, p)
        x = z if i == last else nn.relu(z)
        if record:
            caches.append((x_in, z))
    return x, caches


def _fc_stack_backward(model: Model, caches, grad_logits: np.ndarray) -> np.ndarray:
    grad = grad_logits
    last = len(model.fc_params) - 1
    for i in reversed(range(len(model.fc_params))):
        x_in, z = caches[i]
        if i != last:
            grad = nn.relu_backward(z, grad)
        grad = nn.linear_backward(x_in, model.fc_params[i], grad)
    return grad


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def score_batch(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Occupied-class probabilities for a batch of preprocessed inputs."""
    expected = (3, model.spec.input_size[0], model.spec.input_size[1])
    if inputs.ndim != 4 or inputs.shape[1:] != expected:
        raise DimensionError(f"input shape {inputs.shape} != (N, {', '.join(map(str, expected))})")
    feats, _ = _conv_stack(model, inputs)
    logits, _ = _fc_stack(model, feats.reshape(inputs.shape[0], -1))
    return _softmax(logits)[:, 1]


def predict(model: Model, input: np.ndarray) -> Prediction:
    """Classify one preprocessed crop; occupied wins the 0.5 tie."""
    if input.shape[0] != 1:
        raise DimensionError(f"predict takes a single input, got batch {input.shape}")
    p = float(score_batch(model, input)[0])
    return Prediction(p, OCCUPIED if p >= 0.5 else VACANT)


def _load_rasters(model: Model, index: DatasetIndex) -> tuple[np.ndarray, np.ndarray]:
    """Decode + resize + scale every record once; returns ([N,3,H,W] in [0,1], labels)."""
    h, w, _ = model.spec.input_size
    n = len(index.records)
    rasters = np.empty((n, 3, h, w), np.float32)
    labels = np.empty(n, np.int64)
    for i, rec in enumerate(index.records):
        raster = load_image(rec.path).astype(np.float32) / 255.0
        rasters[i] = _bilinear_resize(raster, h, w).transpose(2, 0, 1)
        labels[i] = 0 if rec.label == VACANT else 1
    return rasters, labels


def fine_tune(model: Model, train_index: DatasetIndex, hp: Hyperparams) -> TrainReport:
    """Mini-batch SGD over the index; conv stages optionally frozen.

    Channel means are measured on the training rasters and stored on the model
    so inference preprocessing is self-contained. With frozen conv stages the
    conv activations of each sample never change, so they are computed once
    and reused (bit-identical to recomputing them every step).
    """
    hp.validate()
    if not train_index.records:
        raise ValidationError("training index is empty")
    if train_index.labels() != {VACANT, OCCUPIED}:
        raise ValidationError(f"training data must contain both labels, got {sorted(train_index.labels())}")
    t0 = time.perf_counter()

    pixels, labels = _load_rasters(model, train_index)
    model.channel_means = pixels.mean(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    pixels -= model.channel_means[:, None, None]
    n = len(labels)

    for p in model.conv_params:
        p.frozen = hp.freeze_conv
    feats = _frozen_features(model, pixels) if hp.freeze_conv else None

    rng = np.random.default_rng(hp.seed)
    loss_curve: list[tuple[int, float]] = []
    for t in range(hp.iterations):
        lr_t = hp.lr * hp.lr_decay_factor ** (t // hp.lr_decay_every)
        idx = rng.integers(0, n, size=hp.batch_size)
        yb = labels[idx]
        if hp.freeze_conv:
            logits, fc_caches = _fc_stack(model, feats[idx], record=True)
            loss, grad_logits, _ = nn.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(t)
            _fc_stack_backward(model, fc_caches, grad_logits)
            for p in model.fc_params:
                nn.sgd_update(p, lr_t, hp.weight_decay)
        else:
            xb = pixels[idx]
            conv_out, conv_caches = _conv_stack(model, xb, record=True)
            logits, fc_caches = _fc_stack(model, conv_out.reshape(len(idx), -1), record=True)
            loss, grad_logits, _ = nn.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(t)
            grad_feats = _fc_stack_backward(model, fc_caches, grad_logits)
            _conv_stack_backward(model, conv_caches, grad_feats.reshape(conv_out.shape))
            for p in model.params:
                nn.sgd_update(p, lr_t, hp.weight_decay)
        if (t + 1) % LOSS_LOG_EVERY == 0:
            loss_curve.append((t + 1, loss))

    if hp.freeze_conv:
        logits, _ = _fc_stack(model, feats)
    else:
        logits = _batched_logits(model, pixels)
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return TrainReport(loss_curve, accuracy, time.perf_counter() - t0)


def _frozen_features(model: Model, pixels: np.ndarray, chunk: int = 128) -> np.ndarray:
    feats = np.empty((len(pixels), model.spec.flat_features()), np.float32)
    for i in range(0, len(pixels), chunk):
        out, _ = _conv_stack(model, pixels[i : i + chunk])
        feats[i : i + chunk] = out.reshape(out.shape[0], -1)
    return feats


def _batched_logits(model: Model, pixels: np.ndarray, chunk: int = 128) -> np.ndarray:
    parts = []
    for i in range(0, len(pixels), chunk):
        out, _ = _conv_stack(model, pixels[i : i + chunk])
        logits, _ = _fc_stack(model, out.reshape(out.shape[0], -1))
        parts.append(logits)
    return np.concatenate(parts)


def save(model: Model, path):
    """Write the model file: 16-byte header, spec block, then f32 parameters."""
    spec = model.spec
    blob = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, spec.seed))
    h, w, c = spec.input_size
    words = [h, w, c, len(spec.conv_stages)]
    for st in spec.conv_stages:
        words += [st.out_channels, st.kernel, st.stride, st.pad, st.pool_window, st.pool_stride]
    words.append(len(spec.fc_sizes))
    words += spec.fc_sizes
    blob += struct.pack(f"<{len(words)}I", *words)
    blob += np.asarray(model.channel_means, np.float32).astype("<f4").tobytes()
    for p in model.params:
        blob += np.ascontiguousarray(p.weights, "<f4").tobytes()
        blob += np.ascontiguousarray(p.bias, "<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load(path) -> Model:
    """Read a model file back; inverse of save up to byte identity."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the header")
    magic, version, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} not supported (expected {FORMAT_VERSION})")
    off = _HEADER.size

    def take_u32(count: int) -> list[int]:
        nonlocal off
        need = 4 * count
        if off + need > len(data):
            raise TruncatedFileError("file ends inside the spec block")
        vals = list(struct.unpack_from(f"<{count}I", data, off))
        off += need
        return vals

    h, w, c, n_stages = take_u32(4)
    stages = [ConvStage(*take_u32(6)) for _ in range(n_stages)]
    (n_fc,) = take_u32(1)
    fc_sizes = take_u32(n_fc)
    if off + 12 > len(data):
        raise TruncatedFileError("file ends inside the channel-mean block")
    means = np.frombuffer(data, "<f4", count=3, offset=off).copy()
    off += 12
    spec = ModelSpec((h, w, c), stages, fc_sizes, seed)
    spec.validate()

    params = []
    for w_shape, b_shape in spec.layer_shapes():
        nw, nb = int(np.prod(w_shape)), int(np.prod(b_shape))
        if off + 4 * (nw + nb) > len(data):
            raise TruncatedFileError("file ends inside the parameter block")
        weights = np.frombuffer(data, "<f4", count=nw, offset=off).reshape(w_shape).copy()
        off += 4 * nw
        bias = np.frombuffer(data, "<f4", count=nb, offset=off).reshape(b_shape).copy()
        off += 4 * nb
        params.append(nn.LayerParams(weights, bias))
    if off != len(data):
        raise ModelFormatError(f"{len(data) - off} trailing bytes after the parameter block")
    return Model(spec, params, means)
