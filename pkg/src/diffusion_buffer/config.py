"""INI-style run configuration (``key = value`` under ``[section]`` headers).

Example::

    [sde]
    preset = bbed-paper

    [train]
    epochs = 30
    lr = 1e-3

    [data]
    train_dir = data/train

Unknown sections or keys are rejected by name. ``sde.preset`` selects one of
the shipped parameter sets (``ouve-paper``, ``bbed-paper``); explicit keys in
``[sde]`` override the preset.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .score import NetConfig
from .sde import PRESETS, SdeParams
from .spectral import StftConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    sde: SdeParams = field(default_factory=lambda: PRESETS["bbed-paper"])
    stft: StftConfig = field(default_factory=StftConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    sde_preset: str | None = "bbed-paper"


_SECTIONS = {"sde": SdeParams, "stft": StftConfig, "net": NetConfig, "train": TrainConfig}
_FREE = {"data": ("train_dir", "valid_dir"), "output": ("dir", "checkpoint", "trace")}


def _coerce(cls, key, text):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    kind = str(types[key])
    try:
        if "int" in kind and "float" not in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text.strip()


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    for section in cp.sections():
        if section not in _SECTIONS and section not in _FREE:
            raise ConfigError(f"unknown section [{section}]")
    for section in cp.sections():
        items = dict(cp.items(section))
        if section in _FREE:
            for key in items:
                if key not in _FREE[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
            setattr(cfg, section, items)
            continue
        cls = _SECTIONS[section]
        names = {f.name for f in dataclasses.fields(cls)}
        base = dataclasses.asdict(getattr(cfg, section))
        if section == "sde":
            preset = items.pop("preset", None)
            cfg.sde_preset = preset
            if preset is not None:
                if preset not in PRESETS:
                    raise ConfigError(f"sde.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
                base = PRESETS[preset].to_dict()
            elif items:
                cfg.sde_preset = None
        for key, text in items.items():
            if key not in names:
                raise ConfigError(f"unknown key {section}.{key}")
            base[key] = _coerce(cls, key, text)
        try:
            setattr(cfg, section, cls(**base))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section in _SECTIONS:
        values = dataclasses.asdict(getattr(cfg, section))
        cp[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in values.items()}
    for section in _FREE:
        if getattr(cfg, section):
            cp[section] = dict(getattr(cfg, section))
    from io import StringIO

    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()
