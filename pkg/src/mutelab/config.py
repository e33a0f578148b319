"""Run configuration: JSON file plus command-line overrides, strictly validated.

The file is a single JSON object with optional sections; unknown keys are
rejected by name. An empty file (or empty object) yields the documented
defaults. Flag values always win over file values.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attack import AttackConfig
from .corpus import CorpusConfig, DomainSpec
from .training import TrainConfig

CONFIG_SCHEMA = 1


class ConfigError(Exception):
    pass


@dataclass
class ModelSection:
    size: str = "both"  # tiny, base, or both
    epochs: int = TrainConfig.epochs
    batch_size: int = TrainConfig.batch_size
    lr: float = TrainConfig.lr
    weight_decay: float = TrainConfig.weight_decay
    warmup_steps: int = TrainConfig.warmup_steps
    dev_wer_threshold: float = TrainConfig.dev_wer_threshold
    eval_beam: int = TrainConfig.eval_beam

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            warmup_steps=self.warmup_steps,
            dev_wer_threshold=self.dev_wer_threshold,
            eval_beam=self.eval_beam,
            seed=seed,
        )


@dataclass
class EvalSection:
    split: str = "test"
    domain: str | None = None
    task: str = "transcribe"
    prefix_mode: str = "timestamps"
    beam: int = 5
    jobs: int = 1
    max_entries: int | None = None


@dataclass
class RunConfig:
    schema: int = CONFIG_SCHEMA
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    attack: AttackConfig = field(default_factory=AttackConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "corpus": CorpusConfig,
    "model": ModelSection,
    "attack": AttackConfig,
    "eval": EvalSection,
}


def _fill_section(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    out = cls()
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key}")
        if key == "domains":
            value = _parse_domains(value, where)
        setattr(out, key, value)
    return out


def _parse_domains(data, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}.domains must be an object")
    domains = {}
    for name, spec in data.items():
        extra = set(spec) - {"snr_db", "gain"}
        if extra:
            raise ConfigError(f"unknown key {where}.domains.{name}.{extra.pop()}")
        domains[name] = DomainSpec(
            snr_db=float(spec["snr_db"]), gain=float(spec["gain"])
        )
    return domains


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Parse a config file and apply ``section.key=value`` overrides."""
    data: dict = {}
    if path is not None:
        text = Path(path).read_text().strip()
        if text:
            data = json.loads(text)
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig()
    for key, value in data.items():
        if key == "schema":
            if value != CONFIG_SCHEMA:
                raise ConfigError(f"unsupported config schema {value!r}")
        elif key == "seed":
            cfg.seed = int(value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be an object")
            setattr(cfg, key, _fill_section(_SECTIONS[key], value, key))
        else:
            raise ConfigError(f"unknown key {key}")
    for item in overrides or []:
        _apply_override(cfg, item)
    return cfg


def _apply_override(cfg: RunConfig, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    dotted, raw = item.split("=", 1)
    parts = dotted.split(".")
    if len(parts) == 1 and parts[0] == "seed":
        cfg.seed = int(raw)
        return
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown override target {dotted!r}")
    section, key = parts
    obj = getattr(cfg, section)
    section_fields = {f.name: f for f in fields(obj)}
    if key not in section_fields:
        raise ConfigError(f"unknown key {section}.{key}")
    setattr(obj, key, _coerce(raw, getattr(obj, key), section_fields[key]))


def _coerce(raw: str, current, field_spec):
    if raw.lower() in ("none", "null"):
        return None
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (tuple, list, dict)) or "domains" in field_spec.name:
        return json.loads(raw)
    if current is None:
        # typed by use: try JSON first, fall back to the raw string
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw
