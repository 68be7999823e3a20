"""Training/experiment configuration and the TOML loader."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .alignment import DEFAULT_PAUSE_THRESHOLDS_S
from .corpus import Strategy, ToyCorpusConfig
from .cpo import CpoConfig
from .flow import FlowConfig, OtCfmConfig
from .rhythm import RhythmConfig
from .style import StyleConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda_s: float = 1.0
    lambda_d: float = 1.0
    lambda_cp: float = 1.0
    lambda_cfm: float = 1.0
    lambda_prior: float = 1.0
    lambda_vq: float = 1.0
    lr: float = 1e-3
    grad_clip: float = 1.0
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    strategy: str = "ASp"
    rhythm_on: bool = True
    cpo_on: bool = True
    style_on: bool = True
    cpo_warmup_accuracy: float = 0.6
    segment_frames: int = 64  # random crop length for the flow-matching loss
    duration_source: str = "alignment"  # or "mas"
    pause_thresholds_s: tuple[float, ...] = DEFAULT_PAUSE_THRESHOLDS_S
    frame_shift_s: float = 0.01
    num_threads: int = 1
    cpo: CpoConfig = field(default_factory=CpoConfig)
    otcfm: OtCfmConfig = field(default_factory=OtCfmConfig)
    rhythm: RhythmConfig = field(default_factory=RhythmConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy).value
        weights = [self.lambda_s, self.lambda_d, self.lambda_cp, self.lambda_cfm, self.lambda_prior]
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ConfigError("loss weights must be non-negative with at least one positive")
        if self.cpo_on and not self.rhythm_on:
            raise ConfigError("cpo_on requires rhythm_on (weights come from the pause predictor)")
        if self.duration_source not in ("alignment", "mas"):
            raise ConfigError(f"unknown duration_source {self.duration_source!r}")
        self.pause_thresholds_s = tuple(float(x) for x in self.pause_thresholds_s)
        self.rhythm.n_pause_classes = len(self.pause_thresholds_s) + 2
        self.style.n_mels = self.flow.n_mels

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"cpo": CpoConfig, "otcfm": OtCfmConfig, "rhythm": RhythmConfig, "style": StyleConfig, "flow": FlowConfig}


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown option(s) in [{where}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        val = values[f.name]
        if isinstance(val, list):
            val = tuple(val)
        kwargs[f.name] = val
    return cls(**kwargs)


def train_config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from ``[train]``, ``[cpo]``, ``[otcfm]`` and ``[model.*]`` tables."""
    train = dict(data.get("train", {}))
    for name, cls in _NESTED.items():
        section = data.get(name) if name in ("cpo", "otcfm") else data.get("model", {}).get(name)
        if section is None and isinstance(train.get(name), dict):
            section = train.pop(name)
        train.pop(name, None)
        if section is not None:
            train[name] = _build(cls, section, name)
    if "pauses" in data:
        train["pause_thresholds_s"] = tuple(data["pauses"].get("thresholds_s", DEFAULT_PAUSE_THRESHOLDS_S))
    try:
        return _build(TrainConfig, train, "train")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = cfg.to_dict()
    for key in ("rhythm", "style", "flow"):
        d[key] = dict(d[key])
    return d


def load_toml(path) -> dict:
    with open(Path(path), "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def load_train_config(path=None) -> TrainConfig:
    return train_config_from_dict(load_toml(path)) if path else TrainConfig()


def corpus_config_from_dict(data: dict) -> ToyCorpusConfig:
    return ToyCorpusConfig.from_dict(data.get("corpus", {}))
