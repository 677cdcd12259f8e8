"""Flat ``key = value`` config files shared by the Porter, Sloop and wallet."""

from __future__ import annotations

from pathlib import Path


class ConfigFileError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigFileError(f"line {lineno}: expected key = value")
        if key in out:
            raise ConfigFileError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigFileError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def parse_endpoint(value: str) -> tuple[str, int]:
    host, sep, port = value.strip().rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ConfigFileError(f"bad endpoint {value!r}, expected host:port")
    return host, int(port)


def parse_mapping(value: str) -> dict[str, str]:
    """``a=x, b=y`` -> {"a": "x", "b": "y"}."""
    out = {}
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        k, sep, v = item.partition("=")
        if not sep or not k.strip() or not v.strip():
            raise ConfigFileError(f"bad mapping item {item!r}, expected name=value")
        out[k.strip()] = v.strip()
    return out


def require(cfg: dict[str, str], key: str) -> str:
    try:
        return cfg[key]
    except KeyError:
        raise ConfigFileError(f"missing config key {key!r}") from None


def get_float(cfg: dict[str, str], key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigFileError(f"{key} must be a number") from None


def get_range(cfg: dict[str, str], key: str, default: tuple[float, float]) -> tuple[float, float]:
    if key not in cfg:
        return default
    lo, sep, hi = cfg[key].partition("-")
    try:
        return (float(lo), float(hi)) if sep else (float(lo), float(lo))
    except ValueError:
        raise ConfigFileError(f"{key} must look like 300-600") from None
