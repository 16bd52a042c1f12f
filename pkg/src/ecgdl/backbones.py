"""The five 1-D CNN feature extractors and their length bookkeeping.

All convolutions are valid (no padding) with kernel 21 in the reference
layouts, every conv is followed by batch norm and ReLU, and average pooling
(2/2) sits at fixed gaps between layers.  Output lengths for the canonical
padded input of 18300 samples are pinned at construction time:

    cnn4 -> 4535, cnn7 -> 531, cnn15 -> 206, cnn17 -> 63 (492 at layer 13)

Because records are zero-padded to a common length, each layer also tracks a
per-record *valid* length, scaled proportionally from the true sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import AvgPool1d, BatchNorm1d, Conv1d, Dropout, Module, ModuleList, Parameter
from .tensor import Tensor, relu

__all__ = ["LayerSpec", "BackboneSpec", "named_backbone", "build_backbone",
           "build_residual_backbone", "Backbone", "ResidualBackbone",
           "count_parameters", "scale_valid", "BACKBONE_NAMES"]

PAD_LEN_DEFAULT = 18300

_CHANNELS = {
    "cnn4": (16, 32, 64, 128),
    "cnn7": (16, 32, 32, 64, 64, 128, 128),
    "cnn15": (16, 32, 32, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256),
    "cnn17": (16, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256, 256, 256, 512, 512),
}
_CHANNELS["cnn15res"] = _CHANNELS["cnn15"]

# Shallow nets pool in every inter-layer gap except the first; deep nets pool
# after every second conv starting at layer 3.  Both placements reproduce the
# published output lengths exactly.
_POOL_AFTER = {
    "cnn4": frozenset({2, 3}),
    "cnn7": frozenset({2, 3, 4, 5, 6}),
    "cnn15": frozenset({3, 5, 7, 9, 11, 13}),
    "cnn15res": frozenset({3, 5, 7, 9, 11, 13}),
    "cnn17": frozenset({3, 5, 7, 9, 11, 13, 15}),
}

_EXPECTED_LEN = {"cnn4": 4535, "cnn7": 531, "cnn15": 206, "cnn15res": 206, "cnn17": 63}
_EXPECTED_TAP = {"cnn17": {13: 492}}

_CNN7_DROPOUT = (0.0, 0.2, 0.3, 0.4, 0.5, 0.5, 0.0)

BACKBONE_NAMES = tuple(sorted(_CHANNELS))


@dataclass(frozen=True)
class LayerSpec:
    """One convolutional layer: channels, kernel, dropout, and flags."""

    channels: int
    kernel: int = 21
    dropout_p: float = 0.0
    has_bn: bool = True
    has_relu: bool = True

    def __post_init__(self):
        if self.channels < 1 or self.kernel < 1:
            raise ConfigError(f"invalid layer: channels={self.channels} kernel={self.kernel}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout_p}")


def _ramp_dropout(n_layers: int) -> tuple[float, ...]:
    """First and last layer at 0, interior ramping linearly up to 0.5."""
    if n_layers <= 2:
        return (0.0,) * n_layers
    interior = n_layers - 2
    return (0.0,) + tuple(0.5 * (i + 1) / interior for i in range(interior - 1)) + (0.5, 0.0)


@dataclass(frozen=True)
class BackboneSpec:
    """Ordered conv layers plus the set of gaps holding an average pool."""

    name: str
    layers: tuple[LayerSpec, ...]
    pool_after: frozenset = field(default_factory=frozenset)
    residual: bool = False

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def out_channels(self) -> int:
        return self.layers[-1].channels

    def out_len(self, length: int, upto: int | None = None) -> int:
        """Propagate a time length through (the first ``upto``) layers."""
        upto = self.n_layers if upto is None else upto
        for i, layer in enumerate(self.layers[:upto], start=1):
            if length < layer.kernel:
                raise ShapeError(f"conv{i}: length {length} shorter than kernel {layer.kernel}")
            length = length - layer.kernel + 1
            if i in self.pool_after and i < upto:
                length = ops.pool_out_len(length)
        return length

    def layer_table(self, length: int):
        """(label, out_length, channels) rows for every conv and pool."""
        rows = []
        for i, layer in enumerate(self.layers, start=1):
            length = length - layer.kernel + 1
            rows.append((f"conv{i}", length, layer.channels))
            if i in self.pool_after:
                length = ops.pool_out_len(length)
                rows.append((f"pool{i}", length, layer.channels))
        return rows


def named_backbone(name: str) -> BackboneSpec:
    if name not in _CHANNELS:
        raise ConfigError(f"unknown backbone '{name}' (expected one of {', '.join(BACKBONE_NAMES)})")
    channels = _CHANNELS[name]
    dropout = _CNN7_DROPOUT if name == "cnn7" else _ramp_dropout(len(channels))
    layers = tuple(LayerSpec(channels=c, kernel=21, dropout_p=p) for c, p in zip(channels, dropout))
    return BackboneSpec(name=name, layers=layers, pool_after=_POOL_AFTER[name],
                        residual=(name == "cnn15res"))


def _verify_published_lengths(spec: BackboneSpec) -> None:
    expected = _EXPECTED_LEN.get(spec.name)
    if expected is not None:
        got = spec.out_len(PAD_LEN_DEFAULT)
        if got != expected:
            raise ConfigError(f"{spec.name}: output length for input {PAD_LEN_DEFAULT} is {got}, "
                              f"expected {expected}")
    for tap, want in _EXPECTED_TAP.get(spec.name, {}).items():
        got = spec.out_len(PAD_LEN_DEFAULT, upto=tap)
        if got != want:
            raise ConfigError(f"{spec.name}: layer-{tap} length is {got}, expected {want}")


def scale_valid(true_len, pad_len: int, out_len: int) -> np.ndarray:
    """Proportional valid length: round(T * true/pad), clamped to [1, T]."""
    true_len = np.asarray(true_len, dtype=np.float64)
    scaled = np.floor(out_len * true_len / pad_len + 0.5).astype(np.int64)
    return np.clip(scaled, 1, out_len)


class _ConvBlock(Module):
    """conv -> batch norm -> ReLU -> dropout."""

    def __init__(self, in_ch: int, layer: LayerSpec, rng, dtype, label: str):
        super().__init__()
        self.conv = Conv1d(in_ch, layer.channels, layer.kernel, rng, dtype=dtype, label=label)
        self.bn = BatchNorm1d(layer.channels, dtype=dtype) if layer.has_bn else None
        self.has_relu = layer.has_relu
        self.drop = Dropout(layer.dropout_p, rng) if layer.dropout_p > 0 else None

    def forward(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        if self.has_relu:
            x = relu(x)
        if self.drop is not None:
            x = self.drop(x)
        return x

    __call__ = forward


class Backbone(Module):
    """Sequential CNN feature extractor producing (features, valid, taps)."""

    def __init__(self, spec: BackboneSpec, seed: int = 0, dtype=np.float64):
        super().__init__()
        _verify_published_lengths(spec)
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        blocks = ModuleList()
        in_ch = 1
        for i, layer in enumerate(spec.layers, start=1):
            blocks.append(_ConvBlock(in_ch, layer, rng, dtype, label=f"conv{i}"))
            in_ch = layer.channels
        self.blocks = blocks
        self.pool = AvgPool1d()

    @property
    def out_channels(self) -> int:
        return self.spec.out_channels

    def forward(self, x: Tensor, valid=None, taps=()):
        """Run the stack; returns (features, valid_out, {tap: (features, valid)})."""
        B, pad_len, _ = x.shape
        if valid is None:
            valid = np.full(B, pad_len, dtype=np.int64)
        tap_out = {}
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i in taps:
                tap_out[i] = (x, scale_valid(valid, pad_len, x.shape[1]))
            if i in self.spec.pool_after and i < self.spec.n_layers:
                x = self.pool(x)
        valid_out = scale_valid(valid, pad_len, x.shape[1])
        return x, valid_out, tap_out

    __call__ = forward


class _ResBlock(Module):
    """Two conv blocks with the (cropped, optionally projected) input added."""

    def __init__(self, in_ch: int, a: LayerSpec, b: LayerSpec, rng, dtype, idx: int):
        super().__init__()
        self.block_a = _ConvBlock(in_ch, a, rng, dtype, label=f"conv{idx}")
        self.block_b = _ConvBlock(a.channels, b, rng, dtype, label=f"conv{idx + 1}")
        self.proj = (Conv1d(in_ch, b.channels, 1, rng, dtype=dtype, label=f"proj{idx}")
                     if in_ch != b.channels else None)

    def forward(self, x: Tensor) -> Tensor:
        out = self.block_b(self.block_a(x))
        crop = (x.shape[1] - out.shape[1]) // 2
        skip = x[:, crop : crop + out.shape[1], :] if crop else x
        if self.proj is not None:
            skip = self.proj(skip)
        return out + skip

    __call__ = forward


class ResidualBackbone(Module):
    """cnn15 layout with skip connections around each pair of conv layers."""

    def __init__(self, spec: BackboneSpec, seed: int = 0, dtype=np.float64):
        super().__init__()
        if spec.n_layers % 2 != 1:
            raise ConfigError("residual layout needs one stem layer plus pairs of convs")
        _verify_published_lengths(spec)
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.stem = _ConvBlock(1, spec.layers[0], rng, dtype, label="conv1")
        blocks = ModuleList()
        in_ch = spec.layers[0].channels
        for bi in range((spec.n_layers - 1) // 2):
            a, b = spec.layers[1 + 2 * bi], spec.layers[2 + 2 * bi]
            blocks.append(_ResBlock(in_ch, a, b, rng, dtype, idx=2 + 2 * bi))
            in_ch = b.channels
        self.blocks = blocks
        self.pool = AvgPool1d()

    @property
    def out_channels(self) -> int:
        return self.spec.out_channels

    def forward(self, x: Tensor, valid=None, taps=()):
        B, pad_len, _ = x.shape
        if valid is None:
            valid = np.full(B, pad_len, dtype=np.int64)
        tap_out = {}
        x = self.stem(x)
        if 1 in taps:
            tap_out[1] = (x, scale_valid(valid, pad_len, x.shape[1]))
        for bi, block in enumerate(self.blocks):
            x = block(x)
            end_layer = 2 + 2 * bi + 1
            if end_layer in taps:
                tap_out[end_layer] = (x, scale_valid(valid, pad_len, x.shape[1]))
            if end_layer in self.spec.pool_after and end_layer < self.spec.n_layers:
                x = self.pool(x)
        valid_out = scale_valid(valid, pad_len, x.shape[1])
        return x, valid_out, tap_out

    __call__ = forward


def build_backbone(spec: BackboneSpec | str, seed: int = 0, dtype=np.float64):
    """Construct a backbone from a named layout or a custom BackboneSpec."""
    if isinstance(spec, str):
        spec = named_backbone(spec)
    if spec.residual:
        return ResidualBackbone(spec, seed=seed, dtype=dtype)
    return Backbone(spec, seed=seed, dtype=dtype)


def build_residual_backbone(spec: BackboneSpec | str = "cnn15res", seed: int = 0,
                            dtype=np.float64) -> ResidualBackbone:
    if isinstance(spec, str):
        spec = named_backbone(spec)
    return ResidualBackbone(spec, seed=seed, dtype=dtype)


def count_parameters(model: Module) -> int:
    """Total size of all trainable tensors in the model."""
    return model.count_parameters()
