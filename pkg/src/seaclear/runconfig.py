"""Plain-text key=value run configuration files.

One ``key=value`` per line, ``#`` starts a comment, blank lines ignored,
unknown keys rejected. Serialization is canonical (field order, repr
floats), so parse -> serialize -> parse is a fixed point.
"""

import dataclasses

from .errors import ParameterError
from .trainer import TrainConfig

_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config(text):
    """Parse config text into a TrainConfig, validating keys and values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELDS:
            raise ParameterError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParameterError(f"config line {lineno}: duplicate key {key!r}")
        caster = int if _FIELDS[key] in ("int", int) else float
        try:
            values[key] = caster(value)
        except ValueError as e:
            raise ParameterError(f"config line {lineno}: bad value for {key}: {e}") from e
    return TrainConfig(**values)


def serialize_config(config):
    lines = [f"{f.name}={getattr(config, f.name)!r}" for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path, "r") as f:
        return parse_config(f.read())


def save_config(path, config):
    with open(path, "w", newline="\n") as f:
        f.write(serialize_config(config))
