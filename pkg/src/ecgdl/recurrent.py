"""Recurrent cells and temporal aggregation for CNN feature sequences.

Cells follow the standard formulations with separate input- and hidden-side
biases (the GRU reset gate multiplies the already-biased hidden projection).
Stacks are many-to-one: by default the recurrence freezes once a record's
valid feature prefix is consumed, so zero-padding never reaches the readout.
A bidirectional stack literally runs a second cell forward over the
valid-reversed sequence and concatenates both final states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .heads import global_pool
from .layers import Linear, Module, ModuleList, Parameter
from .tensor import Tensor, concat, sigmoid, tanh_act

__all__ = ["RecurrentSpec", "LstmCell", "GruCell", "RnnCell", "RecurrentStack",
           "RunResult", "ConvLstmModel", "assemble_convlstm",
           "lstm_cell_step", "gru_cell_step", "rnn_cell_step", "run_sequence"]


@dataclass(frozen=True)
class RecurrentSpec:
    """Cell kind, depth, width, direction, and readout strategy."""

    cell: str = "lstm"
    layers: int = 1
    hidden: int = 16
    bidirectional: bool = False
    readout: str = "last"  # last | center | last_pool
    mask_padding: bool = True
    pool_kind: str = "gmp"

    def __post_init__(self):
        if self.cell not in ("rnn", "lstm", "gru"):
            raise ConfigError(f"unknown cell '{self.cell}'")
        if self.readout not in ("last", "center", "last_pool"):
            raise ConfigError(f"unknown readout '{self.readout}'")
        if self.readout == "center" and not self.bidirectional:
            raise ConfigError("center readout is defined for bidirectional stacks only")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("hidden size and layer count must be >= 1")


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, shape).astype(dtype)


class LstmCell(Module):
    """One LSTM unit bank: four gates with x- and h-side weights and biases."""

    GATES = ("i", "f", "o", "g")

    def __init__(self, input_size: int, hidden: int, rng, dtype=np.float64):
        super().__init__()
        self.input_size = input_size
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        for gate in self.GATES:
            setattr(self, f"w_x{gate}", Parameter(_uniform(rng, bound, (input_size, hidden), dtype)))
            setattr(self, f"b_x{gate}", Parameter(_uniform(rng, bound, hidden, dtype)))
            setattr(self, f"w_h{gate}", Parameter(_uniform(rng, bound, (hidden, hidden), dtype)))
            setattr(self, f"b_h{gate}", Parameter(_uniform(rng, bound, hidden, dtype)))

    def _gate(self, name, x, h):
        return (x @ getattr(self, f"w_x{name}") + getattr(self, f"b_x{name}")
                + h @ getattr(self, f"w_h{name}") + getattr(self, f"b_h{name}"))

    def step(self, x_t: Tensor, h: Tensor, c: Tensor):
        """Returns (h', c', gates) for one time step."""
        i = sigmoid(self._gate("i", x_t, h))
        f = sigmoid(self._gate("f", x_t, h))
        o = sigmoid(self._gate("o", x_t, h))
        g = tanh_act(self._gate("g", x_t, h))
        c_new = f * c + i * g
        h_new = o * tanh_act(c_new)
        return h_new, c_new, {"i": i, "f": f, "o": o, "g": g}


class GruCell(Module):
    """Gated recurrent unit with reset/update/new gates."""

    def __init__(self, input_size: int, hidden: int, rng, dtype=np.float64):
        super().__init__()
        self.input_size = input_size
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        for gate in ("r", "z", "n"):
            setattr(self, f"w_x{gate}", Parameter(_uniform(rng, bound, (input_size, hidden), dtype)))
            setattr(self, f"b_x{gate}", Parameter(_uniform(rng, bound, hidden, dtype)))
            setattr(self, f"w_h{gate}", Parameter(_uniform(rng, bound, (hidden, hidden), dtype)))
            setattr(self, f"b_h{gate}", Parameter(_uniform(rng, bound, hidden, dtype)))

    def step(self, x_t: Tensor, h: Tensor):
        r = sigmoid(x_t @ self.w_xr + self.b_xr + h @ self.w_hr + self.b_hr)
        z = sigmoid(x_t @ self.w_xz + self.b_xz + h @ self.w_hz + self.b_hz)
        n = tanh_act(x_t @ self.w_xn + self.b_xn + r * (h @ self.w_hn + self.b_hn))
        h_new = (1.0 - z) * n + z * h
        return h_new, {"r": r, "z": z, "n": n}


class RnnCell(Module):
    """Vanilla tanh recurrence, h' = tanh(W_hh h + W_xh x); no biases."""

    def __init__(self, input_size: int, hidden: int, rng, dtype=np.float64):
        super().__init__()
        self.input_size = input_size
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.w_xh = Parameter(_uniform(rng, bound, (input_size, hidden), dtype))
        self.w_hh = Parameter(_uniform(rng, bound, (hidden, hidden), dtype))

    def step(self, x_t: Tensor, h: Tensor):
        return tanh_act(h @ self.w_hh + x_t @ self.w_xh), {}


def lstm_cell_step(cell: LstmCell, x_t, state):
    """Functional step: state is (h, c); returns (h', (h', c'), gates)."""
    h, c = state
    h_new, c_new, gates = cell.step(x_t, h, c)
    return h_new, (h_new, c_new), gates


def gru_cell_step(cell: GruCell, x_t, h):
    h_new, gates = cell.step(x_t, h)
    return h_new, gates


def rnn_cell_step(cell: RnnCell, x_t, h):
    h_new, _ = cell.step(x_t, h)
    return h_new


_CELL_TYPES = {"lstm": LstmCell, "gru": GruCell, "rnn": RnnCell}


@dataclass
class RunResult:
    """Readout plus optional per-step hidden states and gate traces.

    ``hidden`` maps (layer, direction) to a [B, T, H] tensor in the
    direction's own step order; ``gates`` maps the same key to a dict of
    gate name -> [T, B, H] numpy array.
    """

    readout: Tensor
    hidden: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    valid: np.ndarray | None = None


class RecurrentStack(Module):
    """Multi-layer, optionally bidirectional recurrence with masked readouts."""

    def __init__(self, input_size: int, spec: RecurrentSpec, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.spec = spec
        self.input_size = input_size
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        cell_type = _CELL_TYPES[spec.cell]
        dirs = 2 if spec.bidirectional else 1
        cells = ModuleList()
        for layer in range(spec.layers):
            in_size = input_size if layer == 0 else spec.hidden * dirs
            for _ in range(dirs):
                cells.append(cell_type(in_size, spec.hidden, rng, dtype=dtype))
        self.cells = cells

    def _cell(self, layer: int, direction: int):
        dirs = 2 if self.spec.bidirectional else 1
        return self.cells[layer * dirs + direction]

    @property
    def readout_size(self) -> int:
        dirs = 2 if self.spec.bidirectional else 1
        size = self.spec.hidden * dirs
        if self.spec.readout == "last_pool":
            size += self.input_size
        return size

    def _run_direction(self, seq: Tensor, cell, valid, collect_gates: bool):
        """Unroll one cell over [B, T, F]; state freezes at each record's end."""
        B, T, _ = seq.shape
        H = cell.hidden
        zeros = Tensor(np.zeros((B, H), dtype=seq.data.dtype))
        h, c = zeros, zeros
        h_steps, gate_log = [], {}
        step_idx = np.arange(T)
        for t in range(T):
            x_t = seq[:, t, :]
            if isinstance(cell, LstmCell):
                h_new, c_new, gates = cell.step(x_t, h, c)
            elif isinstance(cell, GruCell):
                h_new, gates = cell.step(x_t, h)
                c_new = None
            else:
                h_new, gates = cell.step(x_t, h)
                c_new = None
            mask = (t < valid).astype(seq.data.dtype)[:, None]
            if mask.all():
                h = h_new
                c = c_new if c_new is not None else c
            else:
                h = h_new * mask + h * (1.0 - mask)
                if c_new is not None:
                    c = c_new * mask + c * (1.0 - mask)
            h_steps.append(h)
            if collect_gates:
                for name, g in gates.items():
                    gate_log.setdefault(name, []).append(g.data.copy())
                if isinstance(cell, LstmCell):
                    gate_log.setdefault("c", []).append(c.data.copy())
                gate_log.setdefault("h", []).append(h.data.copy())
        stacked = concat([hs.reshape(B, 1, H) for hs in h_steps], axis=1)
        gate_arrays = {k: np.stack(v) for k, v in gate_log.items()}
        return stacked, h, gate_arrays

    def run(self, features: Tensor, valid=None, collect_gates: bool = False) -> RunResult:
        """Process a feature sequence; returns the readout and optional traces."""
        B, T, _ = features.shape
        if valid is None or not self.spec.mask_padding:
            valid = np.full(B, T, dtype=np.int64)
        valid = np.asarray(valid, dtype=np.int64)
        if valid.min() < 1:
            raise ShapeError("valid length must be >= 1")

        hidden, gates = {}, {}
        seq = features
        finals = None
        for layer in range(self.spec.layers):
            fwd_seq, fwd_final, fwd_gates = self._run_direction(
                seq, self._cell(layer, 0), valid, collect_gates)
            hidden[(layer, "fwd")] = fwd_seq
            if collect_gates:
                gates[(layer, "fwd")] = fwd_gates
            if self.spec.bidirectional:
                rev = ops.reverse_valid(seq, valid)
                bwd_seq, bwd_final, bwd_gates = self._run_direction(
                    rev, self._cell(layer, 1), valid, collect_gates)
                hidden[(layer, "bwd")] = bwd_seq
                if collect_gates:
                    gates[(layer, "bwd")] = bwd_gates
                # re-align the backward sequence to original time order
                seq = concat([fwd_seq, ops.reverse_valid(bwd_seq, valid)], axis=-1)
                finals = (fwd_seq, bwd_seq, fwd_final, bwd_final)
            else:
                seq = fwd_seq
                finals = (fwd_seq, None, fwd_final, None)

        fwd_seq, bwd_seq, fwd_final, bwd_final = finals
        if self.spec.readout == "center":
            center = valid // 2
            read = concat([ops.time_gather(fwd_seq, center),
                           ops.time_gather(bwd_seq, valid - 1 - center)], axis=-1)
        else:
            read = fwd_final if bwd_final is None else concat([fwd_final, bwd_final], axis=-1)
            if self.spec.readout == "last_pool":
                pool = global_pool(features, valid, self.spec.pool_kind, masked=True)
                read = concat([read, pool], axis=-1)
        return RunResult(readout=read, hidden=hidden, gates=gates, valid=valid)

    __call__ = run


def run_sequence(stack: RecurrentStack, features: Tensor, valid=None) -> Tensor:
    """Readout vector [B, R] for a feature sequence."""
    return stack.run(features, valid).readout


class ConvLstmModel(Module):
    """CNN feature extractor -> recurrent aggregation -> linear classifier."""

    def __init__(self, backbone, spec: RecurrentSpec, classes: int = 4, seed: int = 0,
                 capture_gates: bool = False):
        super().__init__()
        if backbone.out_channels < 1:
            raise ShapeError("backbone must produce at least one channel")
        self.backbone = backbone
        self.spec = spec
        self.capture_gates = capture_gates
        self.recurrent = RecurrentStack(backbone.out_channels, spec, seed=seed,
                                        dtype=backbone.dtype)
        rng = np.random.default_rng(seed + 2)
        self.classifier = Linear(self.recurrent.readout_size, classes, rng, dtype=backbone.dtype)

    def run(self, x: Tensor, valid=None, collect_gates: bool = False):
        """(features, feature_valid, RunResult) for introspection consumers."""
        features, valid_out, _ = self.backbone(x, valid)
        result = self.recurrent.run(features, valid_out, collect_gates=collect_gates)
        return features, valid_out, result

    def forward_heads(self, x: Tensor, valid=None):
        _, _, result = self.run(x, valid)
        return [self.classifier(result.readout)]

    def predict_proba(self, x: Tensor, valid=None) -> Tensor:
        return ops.softmax(self.forward_heads(x, valid)[0])

    __call__ = forward_heads


def assemble_convlstm(backbone, spec: RecurrentSpec, classes: int = 4, seed: int = 0,
                      capture_gates: bool = False) -> ConvLstmModel:
    """Wire a backbone and a recurrent stack into a many-to-one classifier."""
    return ConvLstmModel(backbone, spec, classes=classes, seed=seed,
                         capture_gates=capture_gates)
