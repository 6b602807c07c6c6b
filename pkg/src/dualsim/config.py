"""JSON config loading with located diagnostics, and dotted-key overrides."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path


class ConfigError(ValueError):
    """Malformed or invalid configuration. Message names the file/field at fault."""


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read ({e.strerror})") from e
    return parse_json(text, source=str(path))


def parse_json(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from e


def resolve(value, base_dir, loader=load_json):
    """A config section may be inline (dict) or a path relative to ``base_dir``."""
    if isinstance(value, (str, Path)):
        return loader(Path(base_dir) / value)
    return value


def require(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    if key not in d:
        raise ConfigError(f"{where}.{key}: missing required field")
    return d[key]


def as_float(v, where: str, *, positive=False, nonneg=False, lo=None, hi=None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{where}: must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{where}: must be >= 0, got {v}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}: must be <= {hi}, got {v}")
    return v


def as_int(v, where: str, *, minimum=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v}")
    return v


def as_vec(v, where: str, n: int = 3, lo=None, hi=None) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{where}: expected a list of {n} numbers, got {v!r}")
    return tuple(as_float(x, f"{where}[{i}]", lo=lo, hi=hi) for i, x in enumerate(v))


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if p not in cur or not isinstance(cur[p], dict):
            cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values parse as JSON, falling back to str."""
    out = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        if not key:
            raise ConfigError(f"--set {item!r}: empty key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_dotted(out, key.strip(), value)
    return out
