"""Decision-over-time traces and gate/state capture."""

import numpy as np
import pytest

from ecgdl.backbones import BackboneSpec, LayerSpec, build_backbone, named_backbone
from ecgdl.data import EcgRecord, pad_batch
from ecgdl.errors import CaptureDisabledError, IncompatibleModelError
from ecgdl.introspection import (decision_over_time, export_decision_csv, export_decision_svg,
                                 export_gate_csv, export_gate_svg, gate_trace)
from ecgdl.recurrent import RecurrentSpec, assemble_convlstm
from ecgdl.tensor import no_grad

import oracles


def _model(hidden=2, cell="lstm", capture=True, seed=0, bidirectional=False, readout="last"):
    layers = tuple(LayerSpec(channels=c, kernel=7) for c in (3, 4))
    bb = build_backbone(BackboneSpec(name="i", layers=layers, pool_after=frozenset({1})), seed=seed)
    spec = RecurrentSpec(cell=cell, hidden=hidden, bidirectional=bidirectional, readout=readout)
    return assemble_convlstm(bb, spec, classes=4, seed=seed, capture_gates=capture).eval()


def _record(seed=0, n=80):
    rng = np.random.default_rng(seed)
    return EcgRecord(id=f"i{seed}", samples=rng.normal(size=n).astype(np.float32),
                     sample_rate=20.0, label=1)


class TestDecisionTrace:
    def test_final_entry_equals_prediction(self):
        for seed in range(5):
            model = _model(seed=seed)
            record = _record(seed)
            trace = decision_over_time(model, record)
            x, valid = pad_batch([record], pad_len=None)
            with no_grad():
                pred = int(model.predict_proba(x, valid).data[0].argmax())
            assert trace.final_decision == pred

    def test_rows_are_distributions(self):
        trace = decision_over_time(_model(seed=3), _record(3))
        assert np.allclose(trace.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_truncates_at_valid_length(self):
        model = _model(seed=1)
        record = _record(1, n=50)
        # pad to double length: trace must cover only the valid steps
        trace_padded = decision_over_time(model, record, pad_len=100)
        trace_plain = decision_over_time(model, record, pad_len=None)
        assert len(trace_padded.decisions) < len(trace_plain.decisions) * 2
        assert len(trace_padded.decisions) == trace_padded.probs.shape[0]

    def test_stride_covers_input_without_gaps(self):
        trace = decision_over_time(_model(seed=2), _record(2))
        starts = [r[0] for r in trace.sample_ranges]
        ends = [r[1] for r in trace.sample_ranges]
        assert starts[0] == 0
        assert all(e == s for e, s in zip(ends[:-1], starts[1:]))

    def test_deterministic(self):
        a = decision_over_time(_model(seed=4), _record(4))
        b = decision_over_time(_model(seed=4), _record(4))
        assert np.array_equal(a.probs, b.probs)

    def test_published_stride_ratios(self):
        assert round(18300 / named_backbone("cnn7").out_len(18300)) == 34
        assert round(18300 / named_backbone("cnn4").out_len(18300)) == 4

    def test_bidirectional_rejected(self):
        model = _model(seed=5, bidirectional=True)
        with pytest.raises(IncompatibleModelError):
            decision_over_time(model, _record(5))

    def test_pooled_model_rejected(self):
        from ecgdl.heads import HeadSpec, PooledClassifier

        layers = (LayerSpec(channels=3, kernel=7),)
        bb = build_backbone(BackboneSpec(name="x", layers=layers))
        model = PooledClassifier(bb, HeadSpec(classes=4))
        with pytest.raises(IncompatibleModelError):
            decision_over_time(model, _record(6))


class TestGateTrace:
    def test_zero_weight_lstm_flat_traces(self):
        model = _model(seed=0)
        for _, p in model.recurrent.named_parameters():
            p.data[:] = 0.0
        trace = gate_trace(model, _record(0))
        for name in ("i", "f", "o"):
            assert np.allclose(trace.values[name], 0.5)
        for name in ("g", "h", "c"):
            assert np.allclose(trace.values[name], 0.0)

    def test_dimensions(self):
        model = _model(hidden=2, seed=1)
        record = _record(1)
        trace = gate_trace(model, record)
        assert trace.units == 2
        assert set(trace.values) == {"i", "f", "o", "g", "h", "c"}
        assert all(v.shape == (trace.steps, 2) for v in trace.values.values())

    def test_replay_matches_cell_oracle(self):
        model = _model(hidden=2, seed=2)
        record = _record(2)
        trace = gate_trace(model, record)
        x, valid = pad_batch([record], pad_len=None)
        with no_grad():
            features, valid_out, _ = model.backbone(x, valid)
        cell = model.recurrent.cells[0]
        p = {name: param.data for name, param in cell.named_parameters()}
        h, c = np.zeros(2), np.zeros(2)
        for t in range(int(valid_out[0])):
            h, c, gates = oracles.lstm_step(features.data[0, t], h, c, p)
            for name in ("i", "f", "o", "g"):
                assert np.max(np.abs(trace.values[name][t] - gates[name])) < 1e-12
            assert np.max(np.abs(trace.values["c"][t] - c)) < 1e-12
            assert np.max(np.abs(trace.values["h"][t] - h)) < 1e-12

    def test_capture_disabled_raises(self):
        model = _model(capture=False, seed=3)
        with pytest.raises(CaptureDisabledError):
            gate_trace(model, _record(3))

    def test_rnn_has_no_gates(self):
        model = _model(cell="rnn", seed=4)
        with pytest.raises(IncompatibleModelError):
            gate_trace(model, _record(4))

    def test_gru_quantities(self):
        model = _model(cell="gru", seed=5)
        trace = gate_trace(model, _record(5))
        assert set(trace.values) == {"r", "z", "n", "h"}


def test_exports(tmp_path):
    model = _model(seed=6)
    record = _record(6)
    trace = decision_over_time(model, record)
    export_decision_csv(trace, tmp_path / "d.csv")
    export_decision_svg(trace, tmp_path / "d.svg")
    gates = gate_trace(model, record)
    export_gate_csv(gates, tmp_path / "g.csv")
    export_gate_svg(gates, tmp_path / "g.svg")
    lines = (tmp_path / "d.csv").read_text().strip().splitlines()
    assert lines[0].startswith("step,score_AF")
    assert len(lines) == len(trace.decisions) + 1
    glines = (tmp_path / "g.csv").read_text().strip().splitlines()
    assert glines[0] == "step," + ",".join(f"{q}{u}" for q in ("i", "f", "o", "g", "h", "c")
                                           for u in range(gates.units))
