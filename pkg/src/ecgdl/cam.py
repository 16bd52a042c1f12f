"""Class activation maps for pooled-head classifiers.

A map is the classifier-weighted channel sum of a feature layer, computed
over the record's valid region and linearly upsampled back to input
resolution.  For a GAP head the mean of the raw map plus the class bias
equals the class logit exactly, which serves as a standing regression check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IncompatibleModelError
from .heads import PooledClassifier
from .ops import resample_1d
from .svgplot import signal_heat_svg
from .tensor import Tensor, no_grad

__all__ = ["ClassActivationMap", "compute_cam", "cam_for_prediction",
           "intermediate_cam", "export_cam_csv", "export_cam_svg"]


@dataclass
class ClassActivationMap:
    """Raw map at feature resolution plus its input-resolution upsampling."""

    class_index: int
    raw: np.ndarray
    upsampled: np.ndarray
    record_id: str = ""
    tap: int | None = None


def compute_cam(features, weights, class_index: int, target_len: int | None = None,
                record_id: str = "", tap: int | None = None) -> ClassActivationMap:
    """Weighted channel sum: raw[n] = sum_k weights[k, c] * features[n, k].

    ``features`` is a [T, C] array (or tensor); ``weights`` the [C, classes]
    classifier matrix of the head that consumed this layer's pooled vector.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features)
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if f.ndim != 2:
        raise ConfigError(f"compute_cam expects [T, C] features, got shape {f.shape}")
    if w.shape[0] != f.shape[1]:
        raise ConfigError(f"classifier expects {w.shape[0]} channels, feature map has {f.shape[1]}")
    if not 0 <= class_index < w.shape[1]:
        raise ConfigError(f"class index {class_index} outside 0..{w.shape[1] - 1}")
    raw = f @ w[:, class_index]
    up = resample_1d(raw, target_len) if target_len else raw.copy()
    return ClassActivationMap(class_index=class_index, raw=raw, upsampled=up,
                              record_id=record_id, tap=tap)


def _tap_weight_slice(model: PooledClassifier, tap: int):
    """Classifier weight rows (and bias) that belong to the given tap."""
    if tap not in model.taps:
        raise ConfigError(f"model has no pooled tap {tap} (taps: {model.taps})")
    pos = model.taps.index(tap)
    if model.head.fusion == "mean_vote":
        clf = model.classifiers[pos]
        return clf.weight.data, clf.bias.data
    clf = model.classifiers[0]
    if model.head.fusion == "concat":
        start = sum(model.tap_channels[:pos])
        stop = start + model.tap_channels[pos]
        return clf.weight.data[start:stop], clf.bias.data
    return clf.weight.data, clf.bias.data


def _forward_features(model: PooledClassifier, x: Tensor, valid, tap: int):
    spec = model.backbone.spec
    with no_grad():
        if tap == spec.n_layers:
            features, valid_out, _ = model.backbone(x, valid)
        else:
            _, _, taps = model.backbone(x, valid, taps=(tap,))
            features, valid_out = taps[tap]
    return features.data, valid_out


def cam_for_prediction(model: PooledClassifier, record, pad_len: int | None = None,
                       class_index: int | None = None) -> ClassActivationMap:
    """CAM of the last pooled layer for the model's predicted class.

    ``class_index`` overrides the argmax choice so maps for the remaining
    output neurons can be rendered as well.
    """
    if not isinstance(model, PooledClassifier):
        raise IncompatibleModelError("class activation maps need a pooled-head model")
    model.eval()
    x, valid = _record_batch(record, pad_len)
    if class_index is None:
        with no_grad():
            probs = model.predict_proba(x, valid)
        class_index = int(np.argmax(probs.data[0]))
    return intermediate_cam(model, record, model.taps[-1], pad_len=pad_len,
                            class_index=class_index)


def intermediate_cam(model: PooledClassifier, record, tap: int, pad_len: int | None = None,
                     class_index: int | None = None) -> ClassActivationMap:
    """CAM against the classifier slice that consumed the given tap."""
    if not isinstance(model, PooledClassifier):
        raise IncompatibleModelError("class activation maps need a pooled-head model")
    model.eval()
    weights, _ = _tap_weight_slice(model, tap)
    x, valid = _record_batch(record, pad_len)
    if class_index is None:
        with no_grad():
            probs = model.predict_proba(x, valid)
        class_index = int(np.argmax(probs.data[0]))
    features, valid_out = _forward_features(model, x, valid, tap)
    n_valid = int(valid_out[0])
    true_len = int(valid[0])
    cam = compute_cam(features[0, :n_valid], weights, class_index, target_len=true_len,
                      record_id=_record_id(record), tap=tap)
    return cam


def _record_batch(record, pad_len):
    from .data import pad_batch

    if isinstance(record, Tensor):
        B, L, _ = record.shape
        return record, np.full(B, L, dtype=np.int64)
    return pad_batch([record], pad_len=pad_len)


def _record_id(record) -> str:
    return getattr(record, "id", "")


def _record_samples(record) -> np.ndarray:
    if isinstance(record, Tensor):
        return record.data[0, :, 0]
    return np.asarray(record.samples)


def export_cam_csv(cam: ClassActivationMap, record, path) -> None:
    """Rows of (sample index, signal value, map value) over the valid region."""
    signal = _record_samples(record)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "signal", "cam"])
        for i, (s, v) in enumerate(zip(signal, cam.upsampled)):
            writer.writerow([i, f"{s:.6g}", f"{v:.6g}"])


def export_cam_svg(cam: ClassActivationMap, record, path, title: str = "") -> None:
    signal = _record_samples(record)
    n = min(len(signal), len(cam.upsampled))
    signal_heat_svg(path, signal[:n], cam.upsampled[:n], title=title)
