"""Decision-over-time traces and gate/state captures for recurrent models.

The many-to-one classifier normally sees only the final hidden state; feeding
every intermediate hidden state through the same (untouched) classifier turns
the sequence into per-step softmax scores, an attention-like view of when the
decision formed.  For small LSTMs the raw gate values themselves are worth
plotting, so runs can capture them step by step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import CaptureDisabledError, IncompatibleModelError
from .heads import CLASS_NAMES
from .recurrent import ConvLstmModel
from .svgplot import decision_svg, heat_rows_svg
from .tensor import no_grad

__all__ = ["DecisionTrace", "GateTrace", "decision_over_time", "gate_trace",
           "export_decision_csv", "export_decision_svg",
           "export_gate_csv", "export_gate_svg"]

LSTM_QUANTITIES = ("i", "f", "o", "g", "h", "c")
GRU_QUANTITIES = ("r", "z", "n", "h")


@dataclass
class DecisionTrace:
    """Per-step softmax scores, argmax decisions, and the input-sample stride."""

    probs: np.ndarray       # [steps, classes]
    decisions: np.ndarray   # [steps]
    stride: float           # input samples represented by one step
    sample_ranges: list     # [(start, end)) per step
    record_id: str = ""
    class_names: tuple = CLASS_NAMES

    @property
    def final_decision(self) -> int:
        return int(self.decisions[-1])


@dataclass
class GateTrace:
    """Captured gate/state values of one cell bank: name -> [steps, units]."""

    cell: str
    values: dict
    record_id: str = ""

    @property
    def steps(self) -> int:
        return next(iter(self.values.values())).shape[0]

    @property
    def units(self) -> int:
        return next(iter(self.values.values())).shape[1]

    @property
    def quantities(self) -> tuple:
        return LSTM_QUANTITIES if self.cell == "lstm" else GRU_QUANTITIES


def _check_traceable(model) -> None:
    if not isinstance(model, ConvLstmModel):
        raise IncompatibleModelError("decision-over-time traces need a recurrent model")
    if model.spec.bidirectional or model.spec.readout != "last":
        raise IncompatibleModelError(
            "decision traces are defined for unidirectional last-state readouts only")


def decision_over_time(model: ConvLstmModel, record, pad_len: int | None = None) -> DecisionTrace:
    """Classify every intermediate hidden state; the last entry is the prediction."""
    from .cam import _record_batch, _record_id

    _check_traceable(model)
    model.eval()
    x, valid = _record_batch(record, pad_len)
    pad = x.shape[1]
    with no_grad():
        _, valid_out, result = model.run(x, valid)
        h_seq = result.hidden[(model.spec.layers - 1, "fwd")]
        steps = int(valid_out[0])
        logits = model.classifier(h_seq[0, :steps, :])
        probs = ops.softmax(logits).data
    total_steps = h_seq.shape[1]
    stride = pad / total_steps
    ranges = [(int(round(t * stride)), int(round((t + 1) * stride))) for t in range(steps)]
    return DecisionTrace(probs=probs, decisions=probs.argmax(axis=1), stride=stride,
                         sample_ranges=ranges, record_id=_record_id(record))


def gate_trace(model: ConvLstmModel, record, pad_len: int | None = None,
               layer: int | None = None) -> GateTrace:
    """Per-step gate and state values for one cell bank of the model."""
    from .cam import _record_batch, _record_id

    if not isinstance(model, ConvLstmModel):
        raise IncompatibleModelError("gate traces need a recurrent model")
    if model.spec.cell == "rnn":
        raise IncompatibleModelError("the vanilla recurrence has no gates to trace")
    if not model.capture_gates:
        raise CaptureDisabledError("model was built without gate capture; "
                                   "rebuild with capture_gates=True")
    model.eval()
    layer = model.spec.layers - 1 if layer is None else layer
    x, valid = _record_batch(record, pad_len)
    with no_grad():
        _, valid_out, result = model.run(x, valid, collect_gates=True)
    steps = int(valid_out[0])
    raw = result.gates[(layer, "fwd")]
    names = LSTM_QUANTITIES if model.spec.cell == "lstm" else GRU_QUANTITIES
    values = {name: raw[name][:steps, 0, :] for name in names}
    return GateTrace(cell=model.spec.cell, values=values, record_id=_record_id(record))


def export_decision_csv(trace: DecisionTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"score_{c}" for c in trace.class_names] + ["decision"])
        for t in range(len(trace.decisions)):
            row = [t] + [f"{p:.6f}" for p in trace.probs[t]] + [trace.class_names[trace.decisions[t]]]
            writer.writerow(row)


def export_decision_svg(trace: DecisionTrace, path) -> None:
    decision_svg(path, trace.probs, trace.class_names, trace.decisions)


def export_gate_csv(trace: GateTrace, path) -> None:
    header = ["step"] + [f"{q}{u}" for q in trace.quantities for u in range(trace.units)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(trace.steps):
            row = [t] + [f"{trace.values[q][t, u]:.6f}"
                         for q in trace.quantities for u in range(trace.units)]
            writer.writerow(row)


def export_gate_svg(trace: GateTrace, path) -> None:
    labels, rows = [], []
    for q in trace.quantities:
        for u in range(trace.units):
            labels.append(f"{q}[{u}]")
            rows.append(trace.values[q][:, u])
    heat_rows_svg(path, np.array(rows), labels)
