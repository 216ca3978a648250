"""Flat ``key=value`` text files, and coercion into dataclass configs."""

import dataclasses
import typing

from .errors import ParseError


def read_kv(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected key=value", path, lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv(path, items):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in items.items():
            f.write(f"{key}={value}\n")


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, kind, key):
    origin = typing.get_origin(kind)
    if origin in (tuple, list):
        (item,) = set(typing.get_args(kind)) - {Ellipsis}
        return tuple(_parse(t.strip(), item, key) for t in text.split(",") if t.strip())
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ParseError(f"bad boolean for {key}: {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ParseError(f"bad value for {key}: {text!r}") from None


def config_to_kv(cfg):
    return {f.name: format_value(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def kv_to_fields(cls, items, strict=False):
    """Pick and parse the entries of ``items`` that name fields of ``cls``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, text in items.items():
        if key in names:
            out[key] = _parse(text, hints[key], key)
        elif strict:
            raise ParseError(f"unknown key {key!r} for {cls.__name__}")
    return out
