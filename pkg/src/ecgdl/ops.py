"""Sequence-model operations on (batch, time, channel) tensors.

Everything here builds on :mod:`ecgdl.tensor` and supplies a hand-written
backward pass.  Convolutions are valid (no padding); pooling drops a trailing
odd sample; the masked reductions consume a per-record valid length so that
zero-padded tails never leak into pooled features or readouts.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_op, sum_to_shape

__all__ = [
    "conv1d",
    "avg_pool1d",
    "batch_norm",
    "dropout",
    "linear",
    "softmax",
    "cross_entropy",
    "masked_mean_time",
    "masked_max_time",
    "masked_sum_time",
    "time_gather",
    "reverse_valid",
    "time_resample",
    "pad_time",
]


def conv1d(x, weight, bias=None, label: str = "conv1d") -> Tensor:
    """Valid cross-correlation: out[b,n,j] = sum_k,c w[k,c,j] * x[b,n+k,c] + b[j]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"{label}: expected x[B,L,Cin] and weight[K,Cin,Cout]")
    B, L, Cin = x.shape
    K, KCin, Cout = weight.shape
    if KCin != Cin:
        raise ShapeError(f"{label}: input has {Cin} channels but kernel expects {KCin}")
    if L < K:
        raise ShapeError(f"{label}: input length {L} is shorter than kernel size {K}")

    windows = sliding_window_view(x.data, K, axis=1)  # [B, L-K+1, Cin, K]
    out = np.einsum("blck,kcj->blj", windows, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gw = np.einsum("blck,blj->kcj", windows, g, optimize=True) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            pad = np.zeros((B, K - 1, Cout), dtype=g.dtype) if K > 1 else None
            gp = np.concatenate([pad, g, pad], axis=1) if pad is not None else g
            gwin = sliding_window_view(gp, K, axis=1)  # [B, L, Cout, K]
            gx = np.einsum("bljk,kcj->blc", gwin, weight.data[::-1], optimize=True)
        if bias is not None:
            gb = g.sum(axis=(0, 1)) if bias.requires_grad else None
            return gx, gw, gb
        return gx, gw

    return make_op(label, out, tuple(parents), backward)


def avg_pool1d(x, label: str = "avg_pool1d") -> Tensor:
    """Mean pooling with kernel 2, stride 2; a trailing odd sample is dropped."""
    x = as_tensor(x)
    B, L, C = x.shape
    if L < 2:
        raise ShapeError(f"{label}: input length {L} is shorter than pool kernel 2")
    Lout = (L - 2) // 2 + 1
    out = 0.5 * (x.data[:, 0 : 2 * Lout : 2] + x.data[:, 1 : 2 * Lout : 2])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, 0 : 2 * Lout : 2] = 0.5 * g
        gx[:, 1 : 2 * Lout : 2] = 0.5 * g
        return (gx,)

    return make_op(label, out, (x,), backward)


def pool_out_len(length: int) -> int:
    return (length - 2) // 2 + 1


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the batch and time axes.

    ``running_mean``/``running_var`` are plain arrays mutated in train mode
    (unbiased variance enters the running estimate, biased is used for the
    normalization itself).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, L, C = x.shape
    n = B * L
    if training:
        mean = x.data.mean(axis=(0, 1))
        var = x.data.var(axis=(0, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * n / max(n - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 1)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 1)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if training:
                gxh = g * gamma.data
                gx = inv_std * (gxh - gxh.mean(axis=(0, 1)) - xhat * (gxh * xhat).mean(axis=(0, 1)))
            else:
                gx = g * gamma.data * inv_std
        return gx, ggamma, gbeta

    return make_op("batch_norm", out, (x, gamma, beta), backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: train mode scales survivors by 1/(1-p), eval is identity."""
    from .errors import ConfigError

    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = 1.0 / (1.0 - p)
    out = x.data * keep * scale
    return make_op("dropout", out, (x,), lambda g: (g * keep * scale,))


def linear(x, weight, bias=None) -> Tensor:
    """x[..., F] @ W[F, C] + b[C]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        out = out + as_tensor(bias)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    """Exp-normalization along ``axis``, computed with max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_op("softmax", out, (x,), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    B, C = logits.shape
    if targets.shape != (B,):
        raise ShapeError(f"cross_entropy: targets shape {targets.shape} != ({B},)")
    if targets.min() < 0 or targets.max() >= C:
        raise ShapeError(f"cross_entropy: target outside [0, {C})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    rows = np.arange(B)
    loss = -log_probs[rows, targets].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1.0
        return (g * probs / B,)

    return make_op("cross_entropy", np.asarray(loss), (logits,), backward)


def _check_valid(valid, B: int, T: int) -> np.ndarray:
    valid = np.asarray(valid, dtype=np.int64)
    if valid.shape != (B,):
        raise ShapeError(f"valid lengths shape {valid.shape} != ({B},)")
    if valid.min() < 1:
        raise ShapeError("valid length must be >= 1")
    if valid.max() > T:
        raise ShapeError(f"valid length {valid.max()} exceeds time axis {T}")
    return valid


def _time_mask(valid: np.ndarray, T: int, dtype) -> np.ndarray:
    return (np.arange(T)[None, :] < valid[:, None]).astype(dtype)[:, :, None]


def masked_mean_time(x, valid) -> Tensor:
    """Per-channel mean over the first valid[b] time steps."""
    x = as_tensor(x)
    B, T, C = x.shape
    valid = _check_valid(valid, B, T)
    mask = _time_mask(valid, T, x.dtype)
    denom = valid.astype(x.dtype)[:, None]
    out = (x.data * mask).sum(axis=1) / denom

    def backward(g):
        return (mask * (g / denom)[:, None, :],)

    return make_op("masked_mean_time", out, (x,), backward)


def masked_max_time(x, valid) -> Tensor:
    """Per-channel max over the first valid[b] time steps (first argmax wins)."""
    x = as_tensor(x)
    B, T, C = x.shape
    valid = _check_valid(valid, B, T)
    masked = np.where(np.arange(T)[None, :, None] < valid[:, None, None], x.data, -np.inf)
    idx = masked.argmax(axis=1)  # [B, C]
    b_idx = np.arange(B)[:, None]
    c_idx = np.arange(C)[None, :]
    out = x.data[b_idx, idx, c_idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (b_idx, idx, c_idx), g)
        return (gx,)

    return make_op("masked_max_time", out, (x,), backward)


def masked_sum_time(x, valid) -> Tensor:
    """Per-channel sum over the first valid[b] time steps."""
    x = as_tensor(x)
    B, T, C = x.shape
    valid = _check_valid(valid, B, T)
    mask = _time_mask(valid, T, x.dtype)
    out = (x.data * mask).sum(axis=1)

    def backward(g):
        return (mask * g[:, None, :],)

    return make_op("masked_sum_time", out, (x,), backward)


def time_gather(x, indices) -> Tensor:
    """out[b, :] = x[b, indices[b], :]."""
    x = as_tensor(x)
    B, T, C = x.shape
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (B,):
        raise ShapeError(f"time_gather: indices shape {idx.shape} != ({B},)")
    rows = np.arange(B)
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return make_op("time_gather", out, (x,), backward)


def reverse_valid(x, valid) -> Tensor:
    """Reverse each record's valid prefix along time; the padded tail stays put."""
    x = as_tensor(x)
    B, T, C = x.shape
    valid = _check_valid(valid, B, T)
    t = np.arange(T)[None, :]
    idx = np.where(t < valid[:, None], valid[:, None] - 1 - t, t)
    rows = np.arange(B)[:, None]
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return make_op("reverse_valid", out, (x,), backward)


def _interp_weights(src_len: int, dst_len: int):
    """Sample positions mapping [0, dst_len) onto [0, src_len - 1]."""
    if src_len == 1:
        lo = np.zeros(dst_len, dtype=np.int64)
        return lo, lo, np.zeros(dst_len)
    if dst_len == 1:
        return np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), np.zeros(1)
    pos = np.arange(dst_len) * (src_len - 1) / (dst_len - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src_len - 2)
    frac = pos - lo
    return lo, lo + 1, frac


def time_resample(x, new_len: int) -> Tensor:
    """Linear interpolation along the time axis to ``new_len`` samples."""
    x = as_tensor(x)
    B, T, C = x.shape
    lo, hi, frac = _interp_weights(T, new_len)
    f = frac[None, :, None]
    out = x.data[:, lo] * (1.0 - f) + x.data[:, hi] * f

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), lo), g * (1.0 - f))
        np.add.at(gx, (slice(None), hi), g * f)
        return (gx,)

    return make_op("time_resample", out, (x,), backward)


def pad_time(x, target_len: int) -> Tensor:
    """Right-pad the time axis with zeros up to ``target_len``."""
    x = as_tensor(x)
    B, T, C = x.shape
    if T > target_len:
        raise ShapeError(f"pad_time: length {T} exceeds target {target_len}")
    if T == target_len:
        return x
    out = np.zeros((B, target_len, C), dtype=x.dtype)
    out[:, :T] = x.data

    def backward(g):
        return (g[:, :T].copy(),)

    return make_op("pad_time", out, (x,), backward)


def resample_1d(values: np.ndarray, new_len: int) -> np.ndarray:
    """Plain-numpy linear resampling of a 1-D array (no gradient)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi, frac = _interp_weights(len(values), new_len)
    return values[lo] * (1.0 - frac) + values[hi] * frac
