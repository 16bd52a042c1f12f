"""Record I/O, padding, stratified folds, and a synthetic rhythm generator.

Supported record formats: a one-record-per-file CSV of samples with a
sidecar ``id,path,label`` manifest, and a compact binary format
(magic ``ECG1``, version, sample rate, label byte, length, f32 samples,
little-endian).  Raw archive formats are out of scope; records must be
pre-converted.

The generator builds parameterized P-QRS-T bump trains whose class knobs
mirror the qualitative rhythm signatures: Normal keeps steady RR intervals
and a P wave, AF gets strongly jittered intervals with the P wave replaced
by a low-amplitude fibrillatory oscillation, Other is Normal-like with
premature beats (early beat, compensatory pause), and Noisy drowns the
signal in wander and wideband noise.
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = ["LABELS", "EcgRecord", "SyntheticConfig", "DatasetManifest",
           "label_to_index", "index_to_label", "load_record", "read_binary_record",
           "write_binary_record", "pad_batch", "stratified_fold_indices",
           "stratified_folds", "generate_synthetic", "synthesize_record",
           "write_dataset", "load_manifest", "rhythm_features"]

LABELS = ("AF", "N", "O", "Noisy")
_LABEL_ALIASES = {"~": "Noisy", "NOISE": "Noisy", "AF": "AF", "N": "N", "O": "O", "NOISY": "Noisy"}
_NO_LABEL = 255
MAX_SECONDS = 61.0
BINARY_MAGIC = b"ECG1"
BINARY_VERSION = 1


def label_to_index(token) -> int | None:
    if token is None or token == "":
        return None
    if isinstance(token, (int, np.integer)):
        if not 0 <= int(token) < len(LABELS):
            raise ConfigError(f"label index {token} outside 0..{len(LABELS) - 1}")
        return int(token)
    name = _LABEL_ALIASES.get(str(token).strip().upper() if str(token).strip() != "~" else "~")
    if name is None:
        raise ConfigError(f"unknown label token '{token}'")
    return LABELS.index(name)


def index_to_label(index) -> str:
    return "" if index is None else LABELS[index]


@dataclass
class EcgRecord:
    """One single-channel signal with its sample rate and optional label."""

    id: str
    samples: np.ndarray
    sample_rate: float = 300.0
    label: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise ShapeError(f"record {self.id}: samples must be a non-empty vector")
        if self.sample_rate <= 0:
            raise ConfigError(f"record {self.id}: sample rate must be positive")

    @property
    def true_length(self) -> int:
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def _truncate(samples: np.ndarray, sample_rate: float, rid: str) -> np.ndarray:
    limit = int(round(MAX_SECONDS * sample_rate))
    if len(samples) > limit:
        warnings.warn(f"record {rid}: {len(samples)} samples exceed {MAX_SECONDS:g} s; truncating")
        return samples[:limit]
    return samples


def write_binary_record(record: EcgRecord, path) -> None:
    label = _NO_LABEL if record.label is None else record.label
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IfBI", BINARY_VERSION, record.sample_rate, label,
                             len(record.samples)))
        fh.write(record.samples.astype("<f4").tobytes())


def read_binary_record(path, rid: str | None = None) -> EcgRecord:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise ConfigError(f"{path}: not a binary record (magic {magic!r})")
        version, rate, label, length = struct.unpack("<IfBI", fh.read(13))
        if version != BINARY_VERSION:
            raise ConfigError(f"{path}: unsupported record version {version}")
        raw = fh.read(4 * length)
        if len(raw) != 4 * length:
            raise ConfigError(f"{path}: truncated sample payload")
        samples = np.frombuffer(raw, dtype="<f4").copy()
    samples = _truncate(samples, rate, path.stem)
    return EcgRecord(id=rid or path.stem, samples=samples, sample_rate=rate,
                     label=None if label == _NO_LABEL else label_to_index(int(label)))


def _read_csv_samples(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    if not text:
        raise ConfigError(f"{path}: empty record file")
    tokens = [t for chunk in text.splitlines() for t in chunk.split(",") if t.strip()]
    try:
        return np.array([float(t) for t in tokens], dtype=np.float32)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed sample value ({exc})") from exc


def load_record(path, sample_rate: float = 300.0, label=None, rid: str | None = None) -> EcgRecord:
    """Load one record from a samples CSV or the binary format."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"record file not found: {path}")
    if path.suffix.lower() == ".csv":
        samples = _truncate(_read_csv_samples(path), sample_rate, path.stem)
        return EcgRecord(id=rid or path.stem, samples=samples, sample_rate=sample_rate,
                         label=label_to_index(label))
    return read_binary_record(path, rid=rid)


@dataclass
class DatasetManifest:
    """Record entries, their class histogram, and (optional) fold assignment."""

    entries: list  # of (id, path, label_index)
    class_histogram: dict = field(default_factory=dict)
    fold_assignments: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_histogram:
            hist = {}
            for _, _, label in self.entries:
                name = index_to_label(label) or "unlabeled"
                hist[name] = hist.get(name, 0) + 1
            self.class_histogram = hist

    def labels(self) -> list:
        return [label for _, _, label in self.entries]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "path", "label"]:
            raise ConfigError(f"{path}: manifest must have header id,path,label")
        for row in reader:
            rec_path = Path(row["path"])
            if not rec_path.is_absolute():
                rec_path = path.parent / rec_path
            entries.append((row["id"], rec_path, label_to_index(row["label"])))
    return DatasetManifest(entries=entries)


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "label"])
        for rid, rec_path, label in entries:
            writer.writerow([rid, rec_path, index_to_label(label)])


def load_records(manifest: DatasetManifest, sample_rate: float = 300.0) -> list:
    return [load_record(p, sample_rate=sample_rate, label=l, rid=rid)
            for rid, p, l in manifest.entries]


def pad_batch(records, pad_len: int | None = 18300, dtype=np.float64):
    """Right-pad records with zeros into a (B, pad_len, 1) tensor plus valid lengths."""
    records = list(records)
    if not records:
        raise ShapeError("pad_batch: empty batch")
    lengths = [r.true_length for r in records]
    if pad_len is None:
        pad_len = max(lengths)
    over = [r.id for r in records if r.true_length > pad_len]
    if over:
        raise ShapeError(f"records longer than pad length {pad_len}: {', '.join(over)}")
    x = np.zeros((len(records), pad_len, 1), dtype=dtype)
    for i, r in enumerate(records):
        x[i, : lengths[i], 0] = r.samples
    return Tensor(x), np.array(lengths, dtype=np.int64)


def stratified_fold_indices(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold index per record: per-class round robin with a continuing pointer.

    Guarantees fold sizes within one of each other overall and per class.
    """
    labels = list(labels)
    n = len(labels)
    if k < 2 or k > n:
        raise ConfigError(f"fold count {k} must be in 2..{n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    by_class = {}
    for idx in order:
        by_class.setdefault(labels[idx], []).append(idx)
    folds = np.empty(n, dtype=np.int64)
    pointer = 0
    for key in sorted(by_class, key=str):
        for idx in by_class[key]:
            folds[idx] = pointer % k
            pointer += 1
    return folds


def stratified_folds(manifest: DatasetManifest, k: int = 8, seed: int = 0) -> DatasetManifest:
    folds = stratified_fold_indices(manifest.labels(), k, seed)
    assignment = {rid: int(f) for (rid, _, _), f in zip(manifest.entries, folds)}
    return replace(manifest, fold_assignments=assignment)


# -- synthetic generation ----------------------------------------------------


@dataclass(frozen=True)
class ClassKnobs:
    rr_jitter: float
    p_amp: float
    premature_prob: float = 0.0
    noise: float = 0.02
    fwave_amp: float = 0.0
    wander_amp: float = 0.0
    amp_scale: float = 1.0
    # > 0 switches to irregularly-alternating intervals with |deviation| of at
    # least this many jitter units, so short records still read as irregular
    jitter_floor: float = 0.0


DEFAULT_KNOBS = {
    "AF": ClassKnobs(rr_jitter=0.20, p_amp=0.0, fwave_amp=0.05, jitter_floor=1.0),
    "N": ClassKnobs(rr_jitter=0.015, p_amp=0.18),
    "O": ClassKnobs(rr_jitter=0.015, p_amp=0.18, premature_prob=0.10),
    "Noisy": ClassKnobs(rr_jitter=0.03, p_amp=0.18, noise=0.45, wander_amp=0.7, amp_scale=0.8),
}


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 400
    class_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    seconds: tuple = (10.0, 10.0)
    sample_rate: float = 100.0
    bpm: tuple = (55.0, 90.0)
    seed: int = 0
    knobs: dict = field(default_factory=lambda: dict(DEFAULT_KNOBS))

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("synthetic count must be >= 1")
        if len(self.class_weights) != len(LABELS):
            raise ConfigError(f"need {len(LABELS)} class weights")
        if abs(sum(self.class_weights) - 1.0) > 1e-6:
            raise ConfigError("class weights must sum to 1")


_WAVES = (
    # (amplitude, offset seconds from R, width seconds); P handled separately
    (-0.08, -0.040, 0.014),   # Q
    (1.00, 0.000, 0.014),     # R
    (-0.14, 0.040, 0.018),    # S
    (0.32, 0.220, 0.060),     # T
)
_P_WAVE = (-0.170, 0.038)     # offset, width; amplitude from knobs


def _bump(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _beat_times(seconds: float, base_rr: float, jitter: float, premature: list,
                rng: np.random.Generator, jitter_floor: float = 0.0):
    """Beat schedule from jittered intervals; premature indices come early
    with a compensatory pause so later beats stay on schedule."""
    intervals = [rng.uniform(0.15, 0.35)]
    sign = 1.0 if rng.random() < 0.5 else -1.0
    while sum(intervals) < seconds:
        if jitter_floor > 0.0:
            eps = sign * rng.uniform(jitter_floor, 2.2)
            sign = -sign
        else:
            eps = float(np.clip(rng.normal(), -2.2, 2.2))
        intervals.append(base_rr * (1.0 + jitter * eps))
    for idx in premature:
        if 1 <= idx < len(intervals) - 1:
            intervals[idx] = 0.45 * base_rr
            intervals[idx + 1] = 1.55 * base_rr
    times = np.cumsum(intervals)
    return times[times < seconds - 0.08]


def synthesize_record(label: str, seconds: float, sample_rate: float,
                      rng: np.random.Generator, knobs: ClassKnobs | None = None,
                      bpm: float = 70.0, premature_count: int | None = None,
                      rid: str = "synthetic"):
    """Build one record; returns (EcgRecord, beat_times, premature_times)."""
    if label not in LABELS:
        raise ConfigError(f"unknown class '{label}'")
    knobs = knobs or DEFAULT_KNOBS[label]
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    base_rr = 60.0 / bpm

    approx_beats = max(int(seconds / base_rr), 1)
    eligible = list(range(2, approx_beats - 1))
    premature: list = []
    if eligible:
        if premature_count is not None:
            take = min(premature_count, len(eligible))
            premature = sorted(rng.choice(eligible, size=take, replace=False).tolist())
        elif knobs.premature_prob > 0:
            premature = [i for i in eligible if rng.random() < knobs.premature_prob]
            if not premature:  # class Other must carry at least one anomaly
                premature = [int(rng.choice(eligible))]

    beats = _beat_times(seconds, base_rr, knobs.rr_jitter, premature, rng,
                        jitter_floor=knobs.jitter_floor)
    signal = np.zeros(n)
    for beat in beats:
        for amp, off, width in _WAVES:
            signal += amp * _bump(t, beat + off, width)
        if knobs.p_amp > 0:
            signal += knobs.p_amp * _bump(t, beat + _P_WAVE[0], _P_WAVE[1])

    if knobs.fwave_amp > 0:
        for freq in (5.8, 7.6):
            phase = rng.uniform(0, 2 * np.pi)
            signal += knobs.fwave_amp * np.sin(2 * np.pi * freq * t + phase)
    if knobs.wander_amp > 0:
        phase = rng.uniform(0, 2 * np.pi)
        signal = knobs.amp_scale * signal + knobs.wander_amp * np.sin(2 * np.pi * 0.35 * t + phase)
    signal += rng.normal(0.0, knobs.noise, n)
    signal *= rng.uniform(0.92, 1.08)

    record = EcgRecord(id=rid, samples=signal.astype(np.float32), sample_rate=sample_rate,
                       label=LABELS.index(label))
    premature_times = np.array([beats[i] for i in premature if i < len(beats)])
    return record, beats, premature_times


def _class_counts(count: int, weights) -> list:
    raw = [count * w for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    remainder = count - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def generate_synthetic(config: SyntheticConfig) -> list:
    """Deterministic labeled dataset; interleaves classes in a fixed order."""
    rng = np.random.default_rng(config.seed)
    counts = _class_counts(config.count, config.class_weights)
    queue = []
    for label, c in zip(LABELS, counts):
        queue.extend([label] * c)
    order = rng.permutation(len(queue))
    records = []
    for serial, pos in enumerate(order):
        label = queue[pos]
        seconds = rng.uniform(*config.seconds)
        bpm = rng.uniform(*config.bpm)
        record, _, _ = synthesize_record(label, seconds, config.sample_rate, rng,
                                         knobs=config.knobs[label], bpm=bpm,
                                         rid=f"syn{serial:05d}")
        records.append(record)
    return records


def write_dataset(records, out_dir) -> Path:
    """Write binary records plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in records:
        rel = f"{r.id}.ecg"
        write_binary_record(r, out_dir / rel)
        entries.append((r.id, rel, r.label))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(entries, manifest_path)
    return manifest_path


# -- handcrafted rhythm features (generator sanity oracle) -------------------


def detect_r_peaks(samples: np.ndarray, sample_rate: float) -> np.ndarray:
    """Threshold-and-refractory peak picker; enough for clean synthetic data."""
    x = np.asarray(samples, dtype=np.float64)
    # suppress baseline wander with a crude moving-average highpass
    win = max(int(0.6 * sample_rate) | 1, 3)
    kernel = np.ones(win) / win
    baseline = np.convolve(x, kernel, mode="same")
    flat = x - baseline
    threshold = 0.5 * flat.max()
    refractory = int(0.25 * sample_rate)
    peaks = []
    i = 1
    while i < len(flat) - 1:
        if flat[i] >= threshold and flat[i] >= flat[i - 1] and flat[i] >= flat[i + 1]:
            peaks.append(i)
            i += refractory
        else:
            i += 1
    return np.array(peaks)


def rhythm_features(record: EcgRecord) -> np.ndarray:
    """[RR coefficient of variation, min/median RR, P-wave energy, noise level]."""
    x = np.asarray(record.samples, dtype=np.float64)
    fs = record.sample_rate
    peaks = detect_r_peaks(x, fs)
    if len(peaks) < 3:
        return np.array([1.0, 0.0, 0.0, float(np.std(np.diff(x)))])
    rr = np.diff(peaks) / fs
    cv = float(np.std(rr) / np.mean(rr))
    min_ratio = float(np.min(rr) / np.median(rr))
    windows = []
    for p in peaks[1:]:
        lo = p - int(0.22 * fs)
        hi = p - int(0.10 * fs)
        if lo >= 0:
            windows.append(np.max(np.abs(x[lo:hi])))
    # low quantile: a missing P wave shows up on the beats whose window is
    # clear of the previous beat's T spill
    p_energy = float(np.quantile(windows, 0.25)) if windows else 0.0
    noise = float(np.std(np.diff(x)))
    return np.array([cv, min_ratio, p_energy, noise])
