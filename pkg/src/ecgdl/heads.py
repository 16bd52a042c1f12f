"""Global pooling heads, classifiers, and multi-head fusion.

Pooling collapses a (B, T, C) feature map to one vector per channel, by
default over each record's valid prefix only (the zero-padded tail would
otherwise dilute averages for short records).  Heads may pool several layer
taps and fuse them either by concatenation into one classifier or by mean
voting over per-tap classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import Linear, Module, ModuleList
from .tensor import Tensor, concat

__all__ = ["HeadSpec", "global_pool", "fuse_mean_vote", "PooledClassifier"]

CLASS_NAMES = ("AF", "N", "O", "Noisy")


@dataclass(frozen=True)
class HeadSpec:
    """Pooling kind, pooled taps, fusion strategy, and class count."""

    pooling: str = "gmp"
    taps: tuple[int, ...] = ()
    fusion: str = "single"
    classes: int = 4
    masked: bool = True

    def __post_init__(self):
        if self.pooling not in ("gap", "gmp"):
            raise ConfigError(f"pooling must be gap or gmp, got '{self.pooling}'")
        if self.fusion not in ("single", "concat", "mean_vote"):
            raise ConfigError(f"unknown fusion '{self.fusion}'")
        if self.fusion == "mean_vote" and len(self.taps) < 2:
            raise ConfigError("mean_vote fusion requires at least two taps")
        if self.fusion == "single" and len(self.taps) > 1:
            raise ConfigError("single fusion takes exactly one pooled layer")


def global_pool(features: Tensor, valid, kind: str, masked: bool = True) -> Tensor:
    """Per-channel mean (gap) or max (gmp) over each record's valid prefix."""
    if kind not in ("gap", "gmp"):
        raise ConfigError(f"pooling must be gap or gmp, got '{kind}'")
    B, T, _ = features.shape
    if not masked:
        valid = np.full(B, T, dtype=np.int64)
    if kind == "gap":
        return ops.masked_mean_time(features, valid)
    return ops.masked_max_time(features, valid)


def fuse_mean_vote(logits_list) -> Tensor:
    """Average the per-head softmax probabilities."""
    if len(logits_list) < 2:
        raise ConfigError("mean vote needs at least two heads")
    classes = logits_list[0].shape[-1]
    for l in logits_list[1:]:
        if l.shape[-1] != classes:
            raise ShapeError("mean vote heads disagree on class count")
    probs = ops.softmax(logits_list[0])
    for l in logits_list[1:]:
        probs = probs + ops.softmax(l)
    return probs * (1.0 / len(logits_list))


class PooledClassifier(Module):
    """Backbone + global pooling + linear classifier(s).

    ``forward_heads`` returns one logit tensor per classification head;
    ``predict_proba`` fuses them into one probability vector per record.
    """

    def __init__(self, backbone, head: HeadSpec = HeadSpec(), seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.head = head
        spec = backbone.spec
        self.taps = tuple(head.taps) if head.taps else (spec.n_layers,)
        for tap in self.taps:
            if not 1 <= tap <= spec.n_layers:
                raise ConfigError(f"tap {tap} outside 1..{spec.n_layers}")
        tap_channels = [spec.layers[t - 1].channels for t in self.taps]
        rng = np.random.default_rng(seed + 1)
        dtype = backbone.dtype
        if head.fusion == "mean_vote":
            self.classifiers = ModuleList(
                Linear(c, head.classes, rng, dtype=dtype) for c in tap_channels)
        elif head.fusion == "concat":
            self.classifiers = ModuleList([Linear(sum(tap_channels), head.classes, rng, dtype=dtype)])
        else:
            self.classifiers = ModuleList([Linear(tap_channels[0], head.classes, rng, dtype=dtype)])
        self.tap_channels = tuple(tap_channels)

    def pooled_vectors(self, x: Tensor, valid=None):
        """Pooled feature vector per tap, in tap order."""
        last = self.backbone.spec.n_layers
        inner = tuple(t for t in self.taps if t != last)
        features, valid_out, tap_out = self.backbone(x, valid, taps=inner)
        pooled = []
        for t in self.taps:
            if t == last:
                pooled.append(global_pool(features, valid_out, self.head.pooling, self.head.masked))
            else:
                f, v = tap_out[t]
                pooled.append(global_pool(f, v, self.head.pooling, self.head.masked))
        return pooled

    def forward_heads(self, x: Tensor, valid=None):
        pooled = self.pooled_vectors(x, valid)
        if self.head.fusion == "mean_vote":
            return [clf(vec) for clf, vec in zip(self.classifiers, pooled)]
        if self.head.fusion == "concat":
            return [self.classifiers[0](concat(pooled, axis=-1))]
        return [self.classifiers[0](pooled[0])]

    def predict_proba(self, x: Tensor, valid=None) -> Tensor:
        heads = self.forward_heads(x, valid)
        if len(heads) == 1:
            return ops.softmax(heads[0])
        return fuse_mean_vote(heads)

    __call__ = forward_heads
