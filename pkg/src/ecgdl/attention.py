"""Attention-gated CNN path: additive coefficients, gating, and fusion.

An intermediate feature map is scored position-by-position against the last
conv layer's map (the context, linearly resampled along time so every tap
position has a context vector).  Coefficients are shared across channels,
the gated map is sum-pooled over the valid region, and the resulting vector
joins the globally pooled path either by concatenation into one classifier
or by mean voting over two.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError
from .heads import fuse_mean_vote, global_pool
from .layers import Linear, Module, ModuleList, Parameter
from .ops import resample_1d
from .svgplot import signal_heat_svg
from .tensor import Tensor, concat, no_grad, relu, sigmoid

__all__ = ["AttentionGate", "GatedAttentionMap", "attention_coefficients",
           "gate_and_pool", "GatedAttentionModel", "build_gated_model",
           "export_attention_csv", "export_attention_svg"]


class AttentionGate(Module):
    """Learnable additive-attention parameters (all 1-wide convolutions)."""

    def __init__(self, tap_channels: int, context_channels: int, attention_dim: int,
                 rng, dtype=np.float64):
        super().__init__()
        if attention_dim < 1:
            raise ConfigError("attention dimension must be >= 1")
        self.attention_dim = attention_dim

        def u(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, shape).astype(dtype)

        self.w_x = Parameter(u((tap_channels, attention_dim), tap_channels))
        self.w_c = Parameter(u((context_channels, attention_dim), context_channels))
        self.b_c = Parameter(np.zeros(attention_dim, dtype=dtype))
        self.psi = Parameter(u((attention_dim, 1), attention_dim))
        self.b_phi = Parameter(np.zeros(1, dtype=dtype))


def attention_coefficients(x_tap: Tensor, context: Tensor, gate: AttentionGate) -> Tensor:
    """Per-position coefficients in [0, 1]: sigmoid(psi . relu(Wx x + Wc c + b) + b_phi)."""
    B, T, _ = x_tap.shape
    if context.shape[0] != B:
        raise ConfigError("tap and context batch sizes differ")
    if context.shape[1] != T:
        context = ops.time_resample(context, T)
    hidden = relu(x_tap @ gate.w_x + context @ gate.w_c + gate.b_c)
    scores = hidden @ gate.psi + gate.b_phi
    return sigmoid(scores.reshape(B, T))


def gate_and_pool(x_tap: Tensor, alpha: Tensor, valid=None) -> Tensor:
    """Channel-shared gating then sum pooling over the valid positions."""
    B, T, C = x_tap.shape
    if alpha.shape != (B, T):
        raise ConfigError(f"alpha shape {alpha.shape} does not match features {(B, T)}")
    gated = x_tap * alpha.reshape(B, T, 1)
    if valid is None:
        valid = np.full(B, T, dtype=np.int64)
    return ops.masked_sum_time(gated, valid)


@dataclass
class GatedAttentionMap:
    """Attention coefficients at tap resolution plus their upsampling."""

    tap: int
    alpha: np.ndarray
    upsampled: np.ndarray
    gated_vector: np.ndarray
    record_id: str = ""


class GatedAttentionModel(Module):
    """CNN with one gated intermediate path fused into the global pooled path."""

    def __init__(self, backbone, tap: int = 13, fusion: str = "mean_vote",
                 classes: int = 4, attention_dim: int | None = None,
                 pooling: str = "gmp", seed: int = 0):
        super().__init__()
        spec = backbone.spec
        if not 1 <= tap < spec.n_layers:
            raise ConfigError(f"tap {tap} must name an intermediate layer (1..{spec.n_layers - 1})")
        if fusion not in ("concat", "mean_vote"):
            raise ConfigError(f"fusion must be concat or mean_vote, got '{fusion}'")
        self.backbone = backbone
        self.tap = tap
        self.fusion = fusion
        self.pooling = pooling
        tap_ch = spec.layers[tap - 1].channels
        ctx_ch = spec.out_channels
        rng = np.random.default_rng(seed + 3)
        self.gate = AttentionGate(tap_ch, ctx_ch, attention_dim or tap_ch, rng,
                                  dtype=backbone.dtype)
        if fusion == "concat":
            self.classifiers = ModuleList([Linear(tap_ch + ctx_ch, classes, rng, dtype=backbone.dtype)])
        else:
            self.classifiers = ModuleList([Linear(tap_ch, classes, rng, dtype=backbone.dtype),
                                           Linear(ctx_ch, classes, rng, dtype=backbone.dtype)])
        self.tap_channels = tap_ch
        self.context_channels = ctx_ch

    def _paths(self, x: Tensor, valid=None):
        features, valid_out, taps = self.backbone(x, valid, taps=(self.tap,))
        x_tap, v_tap = taps[self.tap]
        alpha = attention_coefficients(x_tap, features, self.gate)
        gated = gate_and_pool(x_tap, alpha, v_tap)
        pooled = global_pool(features, valid_out, self.pooling)
        return gated, pooled, alpha, v_tap

    def forward_heads(self, x: Tensor, valid=None):
        gated, pooled, _, _ = self._paths(x, valid)
        if self.fusion == "concat":
            return [self.classifiers[0](concat([gated, pooled], axis=-1))]
        return [self.classifiers[0](gated), self.classifiers[1](pooled)]

    def predict_proba(self, x: Tensor, valid=None) -> Tensor:
        heads = self.forward_heads(x, valid)
        if len(heads) == 1:
            return ops.softmax(heads[0])
        return fuse_mean_vote(heads)

    def attention_map(self, record, pad_len: int | None = None) -> GatedAttentionMap:
        from .cam import _record_batch, _record_id

        self.eval()
        x, valid = _record_batch(record, pad_len)
        with no_grad():
            gated, _, alpha, v_tap = self._paths(x, valid)
        n = int(v_tap[0])
        a = alpha.data[0, :n]
        return GatedAttentionMap(tap=self.tap, alpha=a,
                                 upsampled=resample_1d(a, int(valid[0])),
                                 gated_vector=gated.data[0],
                                 record_id=_record_id(record))

    __call__ = forward_heads


def build_gated_model(backbone, tap: int = 13, fusion: str = "mean_vote", classes: int = 4,
                      attention_dim: int | None = None, seed: int = 0) -> GatedAttentionModel:
    return GatedAttentionModel(backbone, tap=tap, fusion=fusion, classes=classes,
                               attention_dim=attention_dim, seed=seed)


def export_attention_csv(amap: GatedAttentionMap, record, path) -> None:
    from .cam import _record_samples

    signal = _record_samples(record)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "signal", "alpha"])
        for i, (s, v) in enumerate(zip(signal, amap.upsampled)):
            writer.writerow([i, f"{s:.6g}", f"{v:.6g}"])


def export_attention_svg(amap: GatedAttentionMap, record, path, title: str = "") -> None:
    from .cam import _record_samples

    signal = _record_samples(record)
    n = min(len(signal), len(amap.upsampled))
    signal_heat_svg(path, signal[:n], amap.upsampled[:n], title=title)
