"""Run configuration: INI-style sections, every field defaulted.

Precedence, lowest to highest: dataclass defaults, config file, command-line
flags. Unknown sections or keys are rejected.

Sections::

    [data]        n_per_class, feature_dim, noise, spec_seed
    [encoders]    EncoderConfig fields except num_classes
    [loss]        tau, tau_mode, terms (comma separated)
    [training]    remaining TrainConfig fields, including seed
    [evaluation]  n_lat, n_lon, lat_min, lat_max, lon_min, lon_max, date, class_id
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .encoders import EncoderConfig, ValidationError
from .evaluation import GridSpec
from .training import TrainConfig

LOSS_KEYS = ("tau", "tau_mode", "terms")


@dataclass(frozen=True)
class DataConfig:
    n_per_class: int = 160
    feature_dim: int = 64
    noise: float = 1.0
    spec_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    date: int = 183
    class_id: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoders: EncoderConfig = field(default_factory=EncoderConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seed_given: bool = False

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["data"] = {k: str(v) for k, v in asdict(self.data).items()}
        cp["encoders"] = {k: str(v) for k, v in asdict(self.encoders).items() if k != "num_classes"}
        t = self.training.to_dict()
        cp["loss"] = {"tau": repr(t.pop("tau")), "tau_mode": t.pop("tau_mode"),
                      "terms": ",".join(t.pop("terms"))}
        cp["training"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in t.items()}
        ev = {**asdict(self.evaluation.grid), "date": self.evaluation.date, "class_id": self.evaluation.class_id}
        cp["evaluation"] = {k: str(v) for k, v in ev.items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _coerce(cls, key: str, raw: str):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ValidationError(f"unknown key {key!r} for {cls.__name__}")
    default = getattr(cls(), key)
    if isinstance(default, bool):
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw!r}") from None
    return raw.strip()


def parse_sections(sections: dict[str, dict[str, str]]) -> RunConfig:
    allowed = {"data", "encoders", "loss", "training", "evaluation"}
    unknown = set(sections) - allowed
    if unknown:
        raise ValidationError(f"unknown config section(s) {sorted(unknown)}")
    data = DataConfig(**{k: _coerce(DataConfig, k, v) for k, v in sections.get("data", {}).items()})
    enc_raw = sections.get("encoders", {})
    if "num_classes" in enc_raw:
        raise ValidationError("encoders.num_classes comes from the dataset and cannot be configured")
    enc = EncoderConfig(**{k: _coerce(EncoderConfig, k, v) for k, v in enc_raw.items()})
    train_kw = {}
    for k, v in sections.get("loss", {}).items():
        if k not in LOSS_KEYS:
            raise ValidationError(f"unknown key {k!r} in [loss]")
        train_kw[k] = _coerce(TrainConfig, k, v)
    for k, v in sections.get("training", {}).items():
        if k in LOSS_KEYS:
            raise ValidationError(f"{k!r} belongs in [loss], not [training]")
        train_kw[k] = _coerce(TrainConfig, k, v)
    seed_given = "seed" in train_kw
    training = TrainConfig(**train_kw)
    ev_raw = dict(sections.get("evaluation", {}))
    ev_kw = {}
    for k in ("date", "class_id"):
        if k in ev_raw:
            ev_kw[k] = _coerce(EvalConfig, k, ev_raw.pop(k))
    grid = GridSpec(**{k: _coerce(GridSpec, k, v) for k, v in ev_raw.items()})
    return RunConfig(data, enc, training, EvalConfig(grid, **ev_kw), seed_given)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    return parse_sections({s: dict(cp[s]) for s in cp.sections()})


def with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return replace(cfg, training=replace(cfg.training, seed=seed), seed_given=True)
