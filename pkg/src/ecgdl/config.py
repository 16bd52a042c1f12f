"""Plain-text run configuration: named sections of key=value pairs.

The resolved configuration is echoed into every run's output directory for
provenance.  Any key can be overridden through the environment as
``ECGDL_<SECTION>__<KEY>`` (for example ``ECGDL_TRAIN__LR=0.01``).
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import build_gated_model
from .backbones import BackboneSpec, LayerSpec, build_backbone, named_backbone, BACKBONE_NAMES
from .data import SyntheticConfig
from .errors import ConfigError
from .heads import HeadSpec, PooledClassifier
from .recurrent import RecurrentSpec, assemble_convlstm
from .training import PretrainSchedule, TrainConfig

__all__ = ["RunConfig", "parse_config", "build_model_from_config", "ENV_PREFIX"]

ENV_PREFIX = "ECGDL_"

_DEFAULTS = {
    "model": {
        "backbone": "cnn7",
        "custom_layers": "",
        "aggregator": "pool",      # pool | lstm | gru | rnn | attention
        "pooling": "gmp",
        "taps": "",
        "fusion": "single",
        "layers": "1",
        "hidden": "16",
        "bidirectional": "false",
        "readout": "last",
        "attention_tap": "13",
        "attention_dim": "",
        "classes": "4",
        "masked_pooling": "true",
        "capture_gates": "false",
    },
    "train": {
        "epochs": "50",
        "batch": "16",
        "lr": "0.001",
        "decay": "0.95",
        "seed": "0",
        "dtype": "f32",
        "pretrain": "false",
        "pretrain_epochs": "50",
        "backbone_lr": "0.0001",
        "head_lr": "0.001",
    },
    "data": {
        "manifest": "",
        "sample_rate": "300",
        "input_seconds": "61",
        "synthetic": "false",
        "count": "400",
        "seconds_min": "10",
        "seconds_max": "10",
        "class_weights": "0.25,0.25,0.25,0.25",
        "seed": "7",
        "bpm_min": "55",
        "bpm_max": "90",
    },
    "output": {
        "dir": "runs/out",
    },
}


def _parse_bool(section: str, key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got '{raw}'")


def _parse_num(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got '{raw}'") from None


@dataclass
class RunConfig:
    """Typed view over the four config sections."""

    raw: dict = field(default_factory=dict)
    source: str = ""

    # -- accessors ---------------------------------------------------------

    def get(self, section: str, key: str) -> str:
        return self.raw[section][key]

    def get_int(self, section, key) -> int:
        return _parse_num(section, key, self.get(section, key), int)

    def get_float(self, section, key) -> float:
        return _parse_num(section, key, self.get(section, key), float)

    def get_bool(self, section, key) -> bool:
        return _parse_bool(section, key, self.get(section, key))

    # -- derived objects ----------------------------------------------------

    @property
    def pad_len(self) -> int:
        return int(round(self.get_float("data", "input_seconds") * self.get_float("data", "sample_rate")))

    def train_config(self, seed_override: int | None = None) -> TrainConfig:
        seed = self.get_int("train", "seed") if seed_override is None else seed_override
        return TrainConfig(epochs=self.get_int("train", "epochs"),
                           batch_size=self.get_int("train", "batch"),
                           lr=self.get_float("train", "lr"),
                           decay=self.get_float("train", "decay"),
                           seed=seed,
                           dtype=self.get("train", "dtype"),
                           pad_len=self.pad_len)

    def pretrain_schedule(self) -> PretrainSchedule:
        return PretrainSchedule(pretrain_epochs=self.get_int("train", "pretrain_epochs"),
                                joint_epochs=self.get_int("train", "epochs"),
                                pretrain_lr=self.get_float("train", "lr"),
                                backbone_lr=self.get_float("train", "backbone_lr"),
                                head_lr=self.get_float("train", "head_lr"))

    def synthetic_config(self) -> SyntheticConfig:
        weights = tuple(_parse_num("data", "class_weights", w, float)
                        for w in self.get("data", "class_weights").split(","))
        return SyntheticConfig(count=self.get_int("data", "count"),
                               class_weights=weights,
                               seconds=(self.get_float("data", "seconds_min"),
                                        self.get_float("data", "seconds_max")),
                               sample_rate=self.get_float("data", "sample_rate"),
                               bpm=(self.get_float("data", "bpm_min"),
                                    self.get_float("data", "bpm_max")),
                               seed=self.get_int("data", "seed"))

    def resolved_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, values in self.raw.items():
            parser[section] = dict(values)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def parse_config(path, env=None) -> RunConfig:
    """Read an INI-style config, apply defaults and environment overrides."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    raw = {section: dict(values) for section, values in _DEFAULTS.items()}
    for section in parser.sections():
        if section not in raw:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser[section].items():
            if key not in raw[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")
            raw[section][key] = value

    for section, values in raw.items():
        for key in values:
            env_key = f"{ENV_PREFIX}{section.upper()}__{key.upper()}"
            if env_key in env:
                values[key] = env[env_key]

    config = RunConfig(raw=raw, source=str(path))
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    backbone = config.get("model", "backbone")
    if backbone != "custom" and backbone not in BACKBONE_NAMES:
        raise ConfigError(f"[model] backbone: unknown backbone '{backbone}' "
                          f"(expected custom or one of {', '.join(BACKBONE_NAMES)})")
    if backbone == "custom" and not config.get("model", "custom_layers").strip():
        raise ConfigError("[model] custom_layers is required when backbone = custom")
    aggregator = config.get("model", "aggregator")
    if aggregator not in ("pool", "lstm", "gru", "rnn", "attention"):
        raise ConfigError(f"[model] aggregator: unknown aggregator '{aggregator}'")
    config.train_config()  # validates numeric train keys
    if config.get_bool("data", "synthetic"):
        config.synthetic_config()


def parse_layer_grammar(text: str) -> BackboneSpec:
    """Custom layouts: comma-separated ``conv<C>[k<K>][d<P>]`` and ``pool`` entries."""
    layers: list[LayerSpec] = []
    pool_after: set[int] = set()
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if token == "pool":
            if not layers:
                raise ConfigError("custom layout cannot start with a pool")
            pool_after.add(len(layers))
            continue
        if not token.startswith("conv"):
            raise ConfigError(f"unknown layout entry '{token}'")
        body = token[4:]
        kernel, dropout = 21, 0.0
        if "d" in body:
            body, d = body.split("d", 1)
            dropout = _parse_num("model", "custom_layers", d, float)
        if "k" in body:
            body, k = body.split("k", 1)
            kernel = _parse_num("model", "custom_layers", k, int)
        channels = _parse_num("model", "custom_layers", body, int)
        layers.append(LayerSpec(channels=channels, kernel=kernel, dropout_p=dropout))
    if not layers:
        raise ConfigError("custom layout has no conv layers")
    return BackboneSpec(name="custom", layers=tuple(layers), pool_after=frozenset(pool_after))


def build_model_from_config(config: RunConfig, seed_override: int | None = None):
    """Instantiate the configured model (pooled, recurrent, or gated)."""
    seed = config.get_int("train", "seed") if seed_override is None else seed_override
    dtype = np.float32 if config.get("train", "dtype") == "f32" else np.float64
    name = config.get("model", "backbone")
    spec = parse_layer_grammar(config.get("model", "custom_layers")) if name == "custom" \
        else named_backbone(name)
    backbone = build_backbone(spec, seed=seed, dtype=dtype)
    classes = config.get_int("model", "classes")
    aggregator = config.get("model", "aggregator")

    if aggregator == "pool":
        taps = tuple(int(t) for t in config.get("model", "taps").split(",") if t.strip())
        head = HeadSpec(pooling=config.get("model", "pooling"), taps=taps,
                        fusion=config.get("model", "fusion"), classes=classes,
                        masked=config.get_bool("model", "masked_pooling"))
        return PooledClassifier(backbone, head, seed=seed)
    if aggregator == "attention":
        dim_raw = config.get("model", "attention_dim").strip()
        return build_gated_model(backbone, tap=config.get_int("model", "attention_tap"),
                                 fusion=config.get("model", "fusion") if
                                 config.get("model", "fusion") != "single" else "mean_vote",
                                 classes=classes,
                                 attention_dim=int(dim_raw) if dim_raw else None, seed=seed)
    rec = RecurrentSpec(cell=aggregator,
                        layers=config.get_int("model", "layers"),
                        hidden=config.get_int("model", "hidden"),
                        bidirectional=config.get_bool("model", "bidirectional"),
                        readout=config.get("model", "readout"))
    return assemble_convlstm(backbone, rec, classes=classes, seed=seed,
                             capture_gates=config.get_bool("model", "capture_gates"))
