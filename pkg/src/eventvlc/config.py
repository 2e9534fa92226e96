"""Flat ``section.key=value`` configuration files for experiments.

One assignment per line; ``#`` starts a comment. Values are Python
literals (numbers, tuples written as ``a,b``, ``None``, ``True``); anything
else is taken as a plain string. Sections map onto the component
dataclasses, and ``experiment.*`` onto the trial-level settings.
"""
from __future__ import annotations

import ast
import dataclasses
from pathlib import Path

from .channel import CameraModel, EventNoiseParams, LedBarLayout, Trajectory
from .errors import InvalidArgument
from .experiment import ExperimentConfig
from .pipeline import ReceiverParams
from .transmitter import TxConfig

SECTIONS = {
    "tx": TxConfig,
    "camera": CameraModel,
    "layout": LedBarLayout,
    "trajectory": Trajectory,
    "noise": EventNoiseParams,
    "receiver": ReceiverParams,
}
_EXPERIMENT_KEYS = ("seeds", "output_dir", "lead_in", "bin_width", "workers", "write_events")
NOISE_PRESETS = {"default": EventNoiseParams.default, "off": EventNoiseParams.off}


def config_keys() -> list[str]:
    keys = [f"{s}.{f.name}" for s, cls in SECTIONS.items() for f in dataclasses.fields(cls)]
    return keys + ["noise.preset"] + [f"experiment.{k}" for k in _EXPERIMENT_KEYS]


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings; later assignments win."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise InvalidArgument(f"line {n}: key {key!r} needs a section prefix")
        out[key] = value
    return out


def load(path) -> dict[str, str]:
    return parse_text(Path(path).read_text())


def _literal(raw: str):
    low = raw.strip().lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _coerce(raw: str, default):
    v = _literal(raw)
    if v is None:
        return None
    if isinstance(default, str):
        return raw.strip()
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise InvalidArgument(f"expected true/false, got {raw!r}")
        return v
    if isinstance(default, float) and isinstance(v, int):
        return float(v)
    if isinstance(v, list):
        v = tuple(v)
    return v


def build(values: dict[str, str] | None = None) -> ExperimentConfig:
    """Experiment configuration from raw key/value strings over the defaults."""
    values = dict(values or {})
    unknown = sorted(set(values) - set(config_keys()))
    if unknown:
        raise InvalidArgument(f"unknown configuration keys: {', '.join(unknown)}")
    parts = {}
    for section, cls in SECTIONS.items():
        if section == "noise":
            preset = values.get("noise.preset", "default").strip()
            if preset not in NOISE_PRESETS:
                raise InvalidArgument(f"noise.preset must be one of {sorted(NOISE_PRESETS)}")
            base = NOISE_PRESETS[preset]()
        else:
            base = cls()
        kw = {}
        for f in dataclasses.fields(cls):
            key = f"{section}.{f.name}"
            if key in values:
                kw[f.name] = _coerce(values[key], getattr(base, f.name))
        parts[section] = dataclasses.replace(base, **kw) if kw else base
    exp = {}
    defaults = ExperimentConfig.__dataclass_fields__
    for k in _EXPERIMENT_KEYS:
        key = f"experiment.{k}"
        if key not in values:
            continue
        if k == "seeds":
            v = _literal(values[key])
            exp[k] = [int(s) for s in (v if isinstance(v, (tuple, list)) else [v])]
        else:
            d = defaults[k].default
            exp[k] = _coerce(values[key], d if d is not None else "")
    return ExperimentConfig(**parts, **exp)


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v) + ("," if len(v) == 1 else "")
    return repr(v) if isinstance(v, float) else str(v)


def dump(config: ExperimentConfig) -> str:
    """Text that :func:`build` turns back into an equal configuration."""
    lines = []
    for section, cls in SECTIONS.items():
        obj = getattr(config, "tx" if section == "tx" else section)
        for f in dataclasses.fields(cls):
            lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name))}")
    for k in _EXPERIMENT_KEYS:
        v = getattr(config, k)
        if k == "seeds":
            lines.append(f"experiment.seeds={','.join(str(s) for s in v)}")
        else:
            lines.append(f"experiment.{k}={_format(v)}")
    return "\n".join(lines) + "\n"
