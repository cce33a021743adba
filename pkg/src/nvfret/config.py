"""Run configuration: flat ``section.key = value`` files.

The format is TOML restricted to dotted keys at top level, so every line
stands alone and diffs cleanly::

    model.foerster_radius_nm = 13.0
    grid.bin_width_ps = 32.0
    scene.polygons = [[[2.0, 37.0], [38.0, 37.0], [20.0, 3.0]]]

Unknown keys are rejected; every value is re-validated by the dataclass it
feeds.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from nvfret.errors import ConfigError, NvFretError
from nvfret.fitting import OBJECTIVES, GateSpec
from nvfret.grid import IrfSpec, TimeGrid
from nvfret.model import DepthDistribution, ModelParams
from nvfret.simulate import FlimScene, SignalComposition


@dataclass(frozen=True)
class DepthWindow:
    """Optional override of the truncation window of the depth profile."""

    z_min_nm: float | None = None
    z_max_nm: float | None = None


@dataclass(frozen=True)
class CurveSpec:
    r_min_nm: float = 5.0
    r_max_nm: float = 30.0
    n_points: int = 26


@dataclass(frozen=True)
class FitOptions:
    components: int = 1
    objective: str = "poisson-mle"
    min_counts: int = 100

    def __post_init__(self):
        if self.components not in (1, 2):
            raise ConfigError(f"fit.components must be 1 or 2, got {self.components!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"fit.objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    photons: float = 1e6
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    depth: DepthWindow = field(default_factory=DepthWindow)
    irf: IrfSpec = field(default_factory=IrfSpec)
    grid: TimeGrid = field(default_factory=TimeGrid)
    gate: GateSpec = field(default_factory=GateSpec)
    signal: SignalComposition = field(default_factory=SignalComposition)
    scene: FlimScene = field(default_factory=FlimScene)
    curve: CurveSpec = field(default_factory=CurveSpec)
    fit: FitOptions = field(default_factory=FitOptions)
    run: RunOptions = field(default_factory=RunOptions)

    def depth_distribution(self) -> DepthDistribution:
        return DepthDistribution(self.model.depth_mean_nm, self.model.depth_sigma_nm,
                                 self.depth.z_min_nm, self.depth.z_max_nm)


# nested compositions inside the scene section
_SCENE_PARTS = {"on": "on_flake", "off": "off_flake"}


def _coerce(key: str, value, annotation: str):
    """Convert a parsed TOML scalar to the field's declared type."""
    ann = str(annotation)
    if "bool" in ann:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if "float" in ann:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def known_keys() -> list[str]:
    keys = []
    for section in fields(RunConfig):
        cls = section.default_factory().__class__
        for f in fields(cls):
            if section.name == "scene" and f.name in _SCENE_PARTS.values():
                part = next(k for k, v in _SCENE_PARTS.items() if v == f.name)
                keys += [f"scene.{part}.{g.name}" for g in fields(SignalComposition)]
            else:
                keys.append(f"{section.name}.{f.name}")
    return keys


def from_mapping(flat: dict, required: tuple[str, ...] = ()) -> RunConfig:
    """Build a RunConfig from ``{"section.key": value}``; defaults fill gaps."""
    known = set(known_keys())
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in required if k not in flat]
    if missing:
        raise ConfigError(f"missing required config key: {missing[0]}")
    base = RunConfig()
    sections = {}
    for section in fields(RunConfig):
        current = getattr(base, section.name)
        hints = {f.name: f.type for f in fields(current)}
        updates = {}
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if head != section.name or "." in rest:
                continue
            if rest == "polygons":
                updates[rest] = _polygons(key, value)
            else:
                updates[rest] = _coerce(key, value, hints[rest])
        if section.name == "scene":
            for part, attr in _SCENE_PARTS.items():
                comp_updates = {
                    k.split(".")[-1]: _coerce(k, v, "float")
                    for k, v in flat.items() if k.startswith(f"scene.{part}.")
                }
                if comp_updates:
                    updates[attr] = replace(getattr(current, attr), **comp_updates)
        try:
            sections[section.name] = replace(current, **updates) if updates else current
        except NvFretError as exc:
            raise ConfigError(f"invalid [{section.name}] settings: {exc}") from None
    cfg = RunConfig(**sections)
    try:
        cfg.depth_distribution()
    except NvFretError as exc:
        raise ConfigError(f"invalid depth settings: {exc}") from None
    return cfg


def _polygons(key, value):
    try:
        return tuple(tuple((float(x), float(y)) for x, y in poly) for poly in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a list of [[x, y], ...] vertex lists") from None


def loads(text: str, required: tuple[str, ...] = ()) -> RunConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    return from_mapping(_flatten(tree), required)


def load(path, required: tuple[str, ...] = ()) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, required)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, float):
        text = repr(value)
        return text if ("." in text or "e" in text or "n" in text) else text + ".0"
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def dumps(cfg: RunConfig) -> str:
    """Every resolved key, one per line; ``loads(dumps(c)) == c``."""
    lines = []
    for section in fields(RunConfig):
        obj = getattr(cfg, section.name)
        for f in fields(obj):
            value = getattr(obj, f.name)
            if f.name in _SCENE_PARTS.values():
                part = next(k for k, v in _SCENE_PARTS.items() if v == f.name)
                for g in fields(value):
                    lines.append(f"scene.{part}.{g.name} = {_fmt(getattr(value, g.name))}")
                continue
            if value is None:
                continue
            lines.append(f"{section.name}.{f.name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
