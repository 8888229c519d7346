"""Flat key = value experiment configuration files.

One UTF-8 text file carries every synthesis, model and training field under
a dotted prefix (`synth.`, `model.`, `train.`), with `#` starting comments.
Types are inferred from the dataclass defaults; tuples are comma-separated.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from linerec.model import ModelConfig
from linerec.synth import SynthConfig
from linerec.training import TrainConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        if not value.strip():
            return ()
        return tuple(int(v.strip()) for v in value.split(","))
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_SECTIONS = {"synth": SynthConfig, "model": ModelConfig, "train": TrainConfig}


def _build(cls, prefix: str, flat: dict[str, str]):
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key in flat:
            kwargs[f.name] = _coerce(flat[key], getattr(defaults, f.name))
    return cls(**kwargs)


def load_config(path) -> tuple[SynthConfig, ModelConfig, TrainConfig]:
    flat = parse_config_text(Path(path).read_text(encoding="utf-8"))
    known = set()
    for prefix, cls in _SECTIONS.items():
        known.update(f"{prefix}.{f.name}" for f in fields(cls))
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return (_build(SynthConfig, "synth", flat),
            _build(ModelConfig, "model", flat),
            _build(TrainConfig, "train", flat))


def write_config(path, synth: SynthConfig | None = None,
                 model: ModelConfig | None = None,
                 train: TrainConfig | None = None) -> None:
    """Write a complete config file; omitted sections use defaults.

    Every field of every section appears, so the file doubles as the
    reference for available keys.
    """
    sections = {"synth": synth or SynthConfig(),
                "model": model or ModelConfig(),
                "train": train or TrainConfig()}
    lines = ["# linerec experiment configuration"]
    for prefix, obj in sections.items():
        lines.append("")
        for f in fields(type(obj)):
            lines.append(f"{prefix}.{f.name} = {_format(getattr(obj, f.name))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
