"""Mini-batch training loops, the two-phase pretraining protocol, evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import pad_batch
from .errors import ConfigError, NumericalError
from .heads import HeadSpec, PooledClassifier
from .layers import set_lr_group
from .metrics import ConfusionMatrix
from .ops import cross_entropy
from .optim import Adam
from .recurrent import RecurrentSpec, assemble_convlstm
from .tensor import no_grad

__all__ = ["TrainConfig", "train_model", "predict_labels", "evaluate_confusion",
           "pretrain_then_joint", "PretrainSchedule"]

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    decay: float = 0.95
    seed: int = 0
    dtype: str = "f32"
    pad_len: int | None = None
    group_lrs: dict = field(default_factory=dict)

    def np_dtype(self):
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got '{self.dtype}'")
        return _DTYPES[self.dtype]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_model(model, records, config: TrainConfig, start_epoch: int = 0):
    """Adam training with per-epoch learning-rate decay.

    Returns a history dict with one mean loss per epoch.  A non-finite loss
    raises :class:`NumericalError` naming the epoch (the engine's finite
    checks usually trip first inside the offending op).
    """
    records = list(records)
    labels = np.array([r.label for r in records])
    if any(l is None for l in labels):
        raise ConfigError("training needs labeled records")
    model.train()
    opt = Adam(model.parameters(), lr=config.lr,
               group_lrs=config.group_lrs if config.group_lrs else None)
    # honor schedule position when resuming
    for _ in range(start_epoch):
        opt.decay_lr(config.decay)
    rng = np.random.default_rng(config.seed + 17 * start_epoch)
    dtype = config.np_dtype()
    history = {"epoch_loss": []}
    for epoch in range(start_epoch, start_epoch + config.epochs):
        losses = []
        for idx in _batches(len(records), config.batch_size, rng):
            batch = [records[i] for i in idx]
            x, valid = pad_batch(batch, pad_len=config.pad_len, dtype=dtype)
            heads = model.forward_heads(x, valid)
            loss = cross_entropy(heads[0], labels[idx])
            for extra in heads[1:]:
                loss = loss + cross_entropy(extra, labels[idx])
            loss = loss * (1.0 / len(heads))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"training diverged at epoch {epoch}: loss={value}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)
        opt.decay_lr(config.decay)
        history["epoch_loss"].append(float(np.mean(losses)))
    model.eval()
    return history


def predict_labels(model, records, config: TrainConfig) -> np.ndarray:
    """Fused argmax prediction per record, batched, without gradients."""
    model.eval()
    out = np.empty(len(records), dtype=np.int64)
    dtype = config.np_dtype()
    with no_grad():
        for start in range(0, len(records), config.batch_size):
            batch = records[start : start + config.batch_size]
            x, valid = pad_batch(batch, pad_len=config.pad_len, dtype=dtype)
            probs = model.predict_proba(x, valid)
            out[start : start + len(batch)] = probs.data.argmax(axis=1)
    return out


def evaluate_confusion(model, records, config: TrainConfig) -> ConfusionMatrix:
    preds = predict_labels(model, records, config)
    truth = [r.label for r in records]
    return ConfusionMatrix.from_predictions(truth, preds)


@dataclass
class PretrainSchedule:
    """Phase lengths and the joint-phase learning-rate split."""

    pretrain_epochs: int = 50
    joint_epochs: int = 50
    pretrain_lr: float = 1e-3
    backbone_lr: float = 1e-4
    head_lr: float = 1e-3


def pretrain_then_joint(backbone, head: HeadSpec, recurrent: RecurrentSpec, records,
                        schedule: PretrainSchedule, base_config: TrainConfig,
                        classes: int = 4, seed: int = 0, capture_gates: bool = False):
    """Train backbone+pooled head first, then the full ConvLSTM jointly.

    During the joint phase the (pretrained) backbone parameters move with the
    reduced learning rate while the fresh recurrent stack and classifier use
    the full one; both decay together.
    """
    phase1 = replace(base_config, epochs=schedule.pretrain_epochs, lr=schedule.pretrain_lr,
                     group_lrs={})
    pre_head = PooledClassifier(backbone, head, seed=seed)
    if schedule.pretrain_epochs > 0:
        train_model(pre_head, records, phase1)

    model = assemble_convlstm(backbone, recurrent, classes=classes, seed=seed,
                              capture_gates=capture_gates)
    set_lr_group(backbone, "backbone")
    set_lr_group(model.recurrent, "head")
    set_lr_group(model.classifier, "head")
    if schedule.joint_epochs > 0:
        phase2 = replace(base_config, epochs=schedule.joint_epochs,
                         group_lrs={"default": schedule.head_lr,
                                    "backbone": schedule.backbone_lr,
                                    "head": schedule.head_lr})
        train_model(model, records, phase2)
    return model
