"""Flat ``key = value`` configuration files.

Keys are field names of :class:`WorkloadSpec`, :class:`SweepSpec`,
:class:`JoinConfig` and :class:`IndexBuildParams`. Lists are comma
separated, ``#`` starts a comment, unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import enum
import typing

from .errors import ConfigurationError
from .graph_index import IndexBuildParams
from .join import HybridMode, JoinConfig, MethodVariant
from .workloads import Generator, WorkloadSpec

@dataclasses.dataclass(frozen=True)
class SweepSpec:
    """Evaluation grid. ``workload`` is the label written to the CSV."""

    thresholds: tuple = ()
    variants: tuple = tuple(MethodVariant)
    L_values: tuple = (256,)
    workload: str = "synthetic"

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if not th:
            raise ConfigurationError("sweep needs at least one threshold")
        if any(t < 0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigurationError("thresholds must be non-negative and strictly ascending")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "variants", tuple(
            v if isinstance(v, MethodVariant) else MethodVariant.parse(str(v)) for v in self.variants))
        Ls = tuple(int(x) for x in self.L_values)
        if not Ls or min(Ls) < 1:
            raise ConfigurationError("L_values must be positive")
        object.__setattr__(self, "L_values", Ls)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


_PARSERS = {
    "int": int, "float": float, "str": str, "bool": _bool,
    "MethodVariant": MethodVariant.parse, "HybridMode": HybridMode.parse,
    "Generator": Generator.parse,
}

_LIST_ITEM = {"thresholds": float, "variants": MethodVariant.parse, "L_values": int}


def _fields():
    owners = {}
    for cls in (WorkloadSpec, SweepSpec, JoinConfig, IndexBuildParams):
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            if f.name in owners:
                raise RuntimeError(f"duplicate config key {f.name}")
            owners[f.name] = (cls, hints[f.name])
    return owners


FIELDS = _fields()


def parse_value(key: str, text: str):
    if key in _LIST_ITEM:
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_LIST_ITEM[key](t) for t in items)
    _, hint = FIELDS[key]
    name = getattr(hint, "__name__", str(hint))
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        name = hint.__name__
    try:
        return _PARSERS[name](text.strip())
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from exc


def parse_config(text: str) -> dict:
    """Parse config text into ``{key: typed value}``."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value)
    return out


def read_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def pick(values: dict, cls, **overrides):
    """Instantiate ``cls`` from the subset of ``values`` naming its fields."""
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: v for k, v in values.items() if k in names}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)
