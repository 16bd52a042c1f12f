"""Decision-flipping saliency via an optimized temporal shift grid.

A coarse displacement field (one entry per 100 input samples, values in
[-1, 1] on coordinates normalized to the record length) is linearly
upsampled, added to each sample's normalized position, and the input is
re-sampled at the shifted positions.  Minimizing

    lambda_1 * ||m||_1  +  lambda_2 * sum |grad m|^beta  +  s_c(warp(x, m))

drives the softmax score of the originally predicted class down until the
decision flips (to Normal for rhythm records); large shifts then mark the
beats whose timing carried the decision.  The constant-value occlusion
baseline is included for comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EcgDlError
from .heads import CLASS_NAMES
from .layers import Parameter
from .ops import pad_time, resample_1d, time_resample
from .optim import Adam
from .svgplot import panels_svg
from .tensor import Tensor, absolute, as_tensor, make_op, no_grad, power

__all__ = ["ShiftGrid", "PerturbationResult", "MaskConfig", "RejectedRecordError",
           "warp", "objective", "optimize_mask", "occlude",
           "export_perturbation_csv", "export_perturbation_svg"]

NORMAL_CLASS = CLASS_NAMES.index("N")
DOWNSAMPLE_FACTOR = 100


class RejectedRecordError(EcgDlError):
    """The record does not qualify for mask optimization."""


@dataclass
class ShiftGrid:
    """Coarse shift entries in [-1, 1] plus the record geometry they map to."""

    coarse: np.ndarray
    length: int
    factor: int = DOWNSAMPLE_FACTOR

    @staticmethod
    def coarse_len(length: int, factor: int = DOWNSAMPLE_FACTOR) -> int:
        return max(2, math.ceil(length / factor))

    def upsampled(self) -> np.ndarray:
        return resample_1d(self.coarse, self.length)


@dataclass
class MaskConfig:
    lam1: float = 0.2
    lam2: float = 0.1
    beta: float = 1.0
    lr: float = 1e-4
    epochs: int = 500
    seed: int = 0
    factor: int = DOWNSAMPLE_FACTOR
    init_std: float = 0.001
    target_class: int = NORMAL_CLASS


@dataclass
class PerturbationResult:
    grid: ShiftGrid
    warped: np.ndarray
    objective_trace: np.ndarray
    before: np.ndarray
    after: np.ndarray
    flip_achieved: bool
    predicted_class: int
    target_class: int
    record_id: str = ""


def _sample_linear(signal: np.ndarray, positions) -> Tensor:
    """Differentiable linear sampling of a fixed signal at tensor positions.

    Out-of-range positions clamp to the boundary sample (zero gradient there).
    """
    pos = as_tensor(positions)
    L = len(signal)
    p = pos.data
    clamped = np.clip(p, 0.0, L - 1.0)
    lo = np.minimum(np.floor(clamped).astype(np.int64), L - 2) if L > 1 else np.zeros(len(p), np.int64)
    frac = clamped - lo
    out = signal[lo] * (1.0 - frac) + signal[lo + 1] * frac
    in_range = ((p > 0.0) & (p < L - 1.0)).astype(signal.dtype)
    slope = (signal[lo + 1] - signal[lo]) * in_range

    def backward(g):
        return (g * slope,)

    return make_op("sample_linear", out, (pos,), backward)


def warp(signal: np.ndarray, grid) -> Tensor:
    """Re-sample ``signal`` at positions shifted by the upsampled grid.

    ``grid`` may be a coarse tensor/array or a :class:`ShiftGrid`.  A zero
    grid reproduces the signal exactly; the map is differentiable w.r.t. the
    grid values.
    """
    if isinstance(grid, ShiftGrid):
        grid = grid.coarse
    grid = as_tensor(grid)
    signal = np.asarray(signal, dtype=np.float64)
    L = len(signal)
    G = grid.shape[0]
    fine = time_resample(grid.reshape(1, G, 1), L).reshape(L)
    # normalized shift -> sample units: the grid spans [-1, 1] over L samples
    positions = fine * ((L - 1) / 2.0) + np.arange(L, dtype=np.float64)
    return _sample_linear(signal, positions)


def class_score(model, warped: Tensor, class_index: int, pad_len: int | None = None) -> Tensor:
    """Differentiable softmax score of one class for a warped single record."""
    L = warped.shape[0]
    x = warped.reshape(1, L, 1)
    if pad_len is not None and pad_len > L:
        x = pad_time(x, pad_len)
    probs = model.predict_proba(x, np.array([L], dtype=np.int64))
    return probs[0, class_index]


def objective(grid, signal, model, class_index: int, lam1: float, lam2: float,
              beta: float = 1.0, pad_len: int | None = None) -> Tensor:
    """Sparsity + total variation + class score of the warped record."""
    grid = as_tensor(grid)
    warped = warp(signal, grid)
    score = class_score(model, warped, class_index, pad_len=pad_len)
    l1 = absolute(grid).sum()
    diffs = grid[1:] - grid[:-1]
    tv = absolute(diffs).sum() if beta == 1.0 else power(absolute(diffs), beta).sum()
    return lam1 * l1 + lam2 * tv + score


def optimize_mask(record, model, config: MaskConfig = MaskConfig(),
                  pad_len: int | None = None) -> PerturbationResult:
    """Adam-optimize a shift grid until the model's decision flips.

    The record must currently be predicted as a non-target class; grids are
    clamped to [-1, 1] after every step and the objective is recorded each
    epoch.
    """
    from .cam import _record_id, _record_samples

    model.eval()
    signal = np.asarray(_record_samples(record), dtype=np.float64)
    L = len(signal)

    before = class_probs(model, signal, pad_len)
    predicted = int(np.argmax(before))
    if predicted == config.target_class:
        raise RejectedRecordError(
            f"record already predicted as {CLASS_NAMES[config.target_class]}; "
            "mask optimization needs a non-target prediction to flip")

    rng = np.random.default_rng(config.seed)
    coarse = Parameter(rng.normal(0.0, config.init_std, ShiftGrid.coarse_len(L, config.factor)))
    opt = Adam([coarse], lr=config.lr)
    trace = []
    for _ in range(config.epochs):
        obj = objective(coarse, signal, model, predicted, config.lam1, config.lam2,
                        beta=config.beta, pad_len=pad_len)
        trace.append(obj.item())
        opt.zero_grad()
        obj.backward()
        opt.step()
        np.clip(coarse.data, -1.0, 1.0, out=coarse.data)

    with no_grad():
        warped = warp(signal, coarse).data
        after = class_probs(model, warped_signal=warped, pad_len=pad_len)
    grid = ShiftGrid(coarse=coarse.data.copy(), length=L, factor=config.factor)
    return PerturbationResult(grid=grid, warped=warped, objective_trace=np.array(trace),
                              before=before, after=after,
                              flip_achieved=bool(np.argmax(after) == config.target_class),
                              predicted_class=predicted, target_class=config.target_class,
                              record_id=_record_id(record))


def class_probs(model, signal=None, pad_len=None, warped_signal=None) -> np.ndarray:
    """Softmax vector for a plain 1-D signal (no gradients)."""
    s = np.asarray(warped_signal if warped_signal is not None else signal, dtype=np.float64)
    L = len(s)
    with no_grad():
        x = Tensor(s.reshape(1, L, 1))
        if pad_len is not None and pad_len > L:
            x = pad_time(x, pad_len)
        probs = model.predict_proba(x, np.array([L], dtype=np.int64))
    return probs.data[0].copy()


def occlude(signal, mask, k: float) -> np.ndarray:
    """Constant-value occlusion baseline: mask * x + k * (1 - mask)."""
    signal = np.asarray(signal, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != signal.shape:
        raise ConfigError(f"mask shape {mask.shape} != signal shape {signal.shape}")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ConfigError("occlusion mask values must lie in [0, 1]")
    return mask * signal + k * (1.0 - mask)


def export_perturbation_csv(result: PerturbationResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coarse_index", "shift"])
        for i, v in enumerate(result.grid.coarse):
            writer.writerow([i, f"{v:.6g}"])
        writer.writerow([])
        writer.writerow(["class", "before", "after"])
        for name, b, a in zip(CLASS_NAMES, result.before, result.after):
            writer.writerow([name, f"{b:.4f}", f"{a:.4f}"])


def export_perturbation_svg(result: PerturbationResult, record, path,
                            annotation=None) -> None:
    """Three stacked panels: annotation strip, original vs warped, shift trace."""
    from .cam import _record_samples

    signal = np.asarray(_record_samples(record), dtype=np.float64)
    panels = []
    if annotation is not None:
        panels.append(("annotation", None, np.asarray(annotation, dtype=np.float64), None))
    before = ", ".join(f"{p:.2f}" for p in result.before)
    after = ", ".join(f"{p:.2f}" for p in result.after)
    panels.append((f"original (black) vs warped (magenta); softmax {before} -> {after}",
                   signal, None, result.warped))
    panels.append(("shift values", result.grid.upsampled(), None, None))
    panels_svg(path, panels)
