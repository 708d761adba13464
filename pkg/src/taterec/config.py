"""Strict INI run configuration.

Sections: ``[grid]``, ``[solver]``, ``[eigen]``, ``[reconstruct]``, ``[rays]``,
``[inputs]``, ``[output]``, ``[run]`` and any number of ``[phantom]`` /
``[phantom.<label>]`` and ``[speed]`` / ``[speed.<label>]`` primitive
sections. Unknown sections or keys are errors. Environment variables
``TATEREC_<SECTION>_<KEY>`` override file values (section dots become
underscores, e.g. ``TATEREC_SOLVER_CFL=0.125``).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .fields import (
    Disk,
    DomainSpec,
    Gaussian,
    Grid,
    PhantomSpec,
    Ring,
    SineBox,
    SmoothBump,
    make_grid,
)

__all__ = [
    "GridConfig",
    "SolverConfig",
    "EigenConfig",
    "ReconstructConfig",
    "RaysConfig",
    "InputsConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "parse_primitive_spec",
    "load_primitive_spec",
    "ENV_PREFIX",
]

ENV_PREFIX = "TATEREC_"
AUTO = "auto"


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ValueError(f"expected numbers, got {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ValueError(f"expected integers, got {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _auto_or(conv):
    def parse(text: str):
        return AUTO if text.strip().lower() == AUTO else conv(text)

    return parse


def _choice(*options: str):
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t

    return parse


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _str(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class GridConfig:
    extent: tuple[float, ...] = (-0.5, -0.5, 1.5, 1.5)
    counts: tuple[int, ...] = (201,)
    domain: tuple[float, ...] = (0.0, 0.0, 1.0, 1.0)
    detectors_per_side: Any = AUTO

    _parsers = {
        "extent": _floats,
        "counts": _ints,
        "domain": _floats,
        "detectors_per_side": _auto_or(_int),
    }

    @property
    def dim(self) -> int:
        return len(self.domain) // 2

    def build(self) -> tuple[Grid, DomainSpec]:
        d = self.dim
        if len(self.domain) not in (2, 4) or len(self.extent) != 2 * d:
            raise ConfigError("grid.extent and grid.domain need lower and upper corners of equal dimension")
        counts = self.counts if len(self.counts) == d else self.counts * d
        grid = make_grid((self.extent[:d], self.extent[d:]), counts)
        return grid, DomainSpec(self.domain[:d], self.domain[d:])

    def n_per_side(self, grid: Grid, domain: DomainSpec) -> int:
        if self.detectors_per_side != AUTO:
            return int(self.detectors_per_side)
        # one detector per grid cell along the shortest side
        return max(2, int(round(min(domain.sides) / min(grid.spacing))))


@dataclass(frozen=True)
class SolverConfig:
    data: str = "simulate"
    cfl: float = 0.5
    dt: Any = AUTO
    t_max: Any = "adaptive"
    decay_tol: float = 1e-4
    quiet_tol: float = 1e-3
    boundary: str = "absorbing"
    sponge_thickness: int = 10
    sponge_sigma_max: float = 0.0
    sponge_power: float = 3.0
    noise: float = 0.0

    _parsers = {
        "data": _choice("simulate", "dalembert"),
        "cfl": _float,
        "dt": _auto_or(_float),
        "t_max": lambda t: "adaptive" if t.strip().lower() == "adaptive" else float(t),
        "decay_tol": _float,
        "quiet_tol": _float,
        "boundary": _choice("absorbing", "dirichlet"),
        "sponge_thickness": _int,
        "sponge_sigma_max": _float,
        "sponge_power": _float,
        "noise": _float,
    }


@dataclass(frozen=True)
class EigenConfig:
    basis: str = AUTO
    K: Any = AUTO
    tol: float = 1e-10
    trace: str = "green"
    discrete: bool = True

    _parsers = {
        "basis": _choice(AUTO, "analytic", "numerical"),
        "K": _auto_or(_int),
        "tol": _float,
        "trace": _choice("exact", "green", "second_order"),
        "discrete": _bool,
    }


@dataclass(frozen=True)
class ReconstructConfig:
    route: str = "sin"
    closure: bool = True
    compare_routes: bool = True
    kernel_points: int = 16

    _parsers = {
        "route": _choice("sin", "cos", "second_derivative", "operator"),
        "closure": _bool,
        "compare_routes": _bool,
        "kernel_points": _int,
    }


@dataclass(frozen=True)
class RaysConfig:
    enabled: bool = True
    positions: int = 16
    directions: int = 16
    t_escape: float = 50.0
    r_escape: Any = AUTO
    dt: Any = AUTO
    trajectories: int = 8

    _parsers = {
        "enabled": _bool,
        "positions": _int,
        "directions": _int,
        "t_escape": _float,
        "r_escape": _auto_or(_float),
        "dt": _auto_or(_float),
        "trajectories": _int,
    }


@dataclass(frozen=True)
class InputsConfig:
    """Existing files: field files (``phantom``, ``speed``), primitive spec
    files (``phantom_spec``, ``speed_spec``), a sinogram and a basis cache."""

    phantom: str = ""
    speed: str = ""
    phantom_spec: str = ""
    speed_spec: str = ""
    sinogram: str = ""
    basis: str = ""

    _parsers = {k: _str for k in ("phantom", "speed", "phantom_spec", "speed_spec", "sinogram", "basis")}


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    figures: bool = True
    images: bool = True

    _parsers = {"dir": _str, "figures": _bool, "images": _bool}


_PRIMITIVES = {
    "gaussian": (Gaussian, {"center": _floats, "width": _float, "amp": _float, "cutoff": _float}, {"center", "width"}),
    "bump": (SmoothBump, {"center": _floats, "radius": _float, "amp": _float}, {"center", "radius"}),
    "disk": (Disk, {"center": _floats, "radius": _float, "amp": _float}, {"center", "radius"}),
    "ring": (Ring, {"center": _floats, "radius": _float, "width": _float, "amp": _float}, {"center", "radius", "width"}),
    "sinebox": (SineBox, {"lower": _floats, "upper": _floats, "modes": _ints, "amp": _float}, {"lower", "upper", "modes"}),
}

_SECTIONS = {
    "grid": GridConfig,
    "solver": SolverConfig,
    "eigen": EigenConfig,
    "reconstruct": ReconstructConfig,
    "rays": RaysConfig,
    "inputs": InputsConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``source`` is the file it came from (if any)."""

    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    rays: RaysConfig = field(default_factory=RaysConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    speed: PhantomSpec = field(default_factory=PhantomSpec)
    seed: int = 0
    source: str = ""

    def with_output(self, directory: str) -> "RunConfig":
        return replace(self, output=replace(self.output, dir=str(directory)))

    def as_dict(self) -> dict:
        out: dict = {}
        for name in _SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: getattr(sec, f.name) for f in fields(sec)}
        out["phantom"] = [repr(p) for p in self.phantom.primitives]
        out["speed"] = [repr(p) for p in self.speed.primitives]
        out["seed"] = self.seed
        return out


def _parse_section(cls, name: str, items: Mapping[str, str]):
    parsers = cls._parsers
    canonical = {k.lower(): k for k in parsers}
    kwargs = {}
    for raw_key, text in items.items():
        key = canonical.get(raw_key.lower())
        if key is None:
            raise ConfigError(f"unknown key {raw_key!r} in [{name}] (allowed: {', '.join(sorted(parsers))})")
        try:
            kwargs[key] = parsers[key](text)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    return cls(**kwargs)


def _parse_primitive(name: str, items: Mapping[str, str]):
    if "type" in items and "kind" in items:
        raise ConfigError(f"[{name}] gives both type and kind")
    kind = items.get("type", items.get("kind", "")).strip().lower()
    if kind not in _PRIMITIVES:
        raise ConfigError(f"[{name}] needs type (or kind) = one of {', '.join(_PRIMITIVES)}")
    cls, parsers, required = _PRIMITIVES[kind]
    kwargs = {}
    for key, text in items.items():
        if key in ("type", "kind"):
            continue
        if key not in parsers:
            raise ConfigError(f"unknown key {key!r} in [{name}] for type {kind}")
        try:
            kwargs[key] = parsers[key](text)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    missing = required - set(kwargs)
    if missing:
        raise ConfigError(f"[{name}] missing {', '.join(sorted(missing))}")
    return cls(**kwargs)


def _section_kind(name: str) -> str:
    base = name.split(".", 1)[0]
    if base in ("phantom", "speed"):
        return base
    if name in _SECTIONS or name == "run":
        return name
    raise ConfigError(f"unknown section [{name}]")


def _apply_env(raw: dict[str, dict[str, str]], env: Mapping[str, str]) -> None:
    """Fold ``TATEREC_<SECTION>_<KEY>`` variables into the raw section map."""
    known = {name.replace(".", "_"): name for name in list(raw) + list(_SECTIONS) + ["run"]}
    for var, value in sorted(env.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX) :].lower()
        # longest section name first so "phantom_a" beats "phantom"
        for flat in sorted(known, key=len, reverse=True):
            if rest.startswith(flat + "_"):
                raw.setdefault(known[flat], {})[rest[len(flat) + 1 :]] = value
                break
        else:
            raise ConfigError(f"environment override {var} names no known section")


def parse_config(text: str, *, source: str = "", env: Mapping[str, str] | None = None, base: Path | None = None) -> RunConfig:
    """Parse INI text strictly, apply environment overrides and validate inputs."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    parser.optionxform = str  # keep key case (K)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    raw = {name: dict(parser[name]) for name in parser.sections()}
    _apply_env(raw, os.environ if env is None else env)
    kwargs: dict[str, Any] = {}
    phantom, speed = [], []
    for name in raw:  # sections in file order, then overrides
        kind = _section_kind(name)
        if kind == "phantom":
            phantom.append(_parse_primitive(name, raw[name]))
        elif kind == "speed":
            speed.append(_parse_primitive(name, raw[name]))
        elif kind == "run":
            extra = set(raw[name]) - {"seed"}
            if extra:
                raise ConfigError(f"unknown key {sorted(extra)[0]!r} in [run] (allowed: seed)")
            try:
                kwargs["seed"] = int(raw[name].get("seed", 0))
            except ValueError as exc:
                raise ConfigError(f"[run] seed: {exc}") from exc
        else:
            kwargs[kind] = _parse_section(_SECTIONS[kind], name, raw[name])
    cfg = RunConfig(phantom=PhantomSpec(phantom), speed=PhantomSpec(speed), source=source, **kwargs)
    return _validate(cfg, base)


def _validate(cfg: RunConfig, base: Path | None) -> RunConfig:
    try:
        grid, domain = cfg.grid.build()
    except ConfigError as exc:
        raise ConfigError(f"[grid] {exc}") from exc
    if not domain.strictly_inside(grid):
        raise ConfigError("[grid] domain must lie strictly inside the simulation extent")
    s = cfg.solver
    if not 0 < s.cfl <= 1:
        raise ConfigError("[solver] cfl must be in (0, 1]")
    if s.noise < 0:
        raise ConfigError("[solver] noise must be nonnegative")
    if s.data == "dalembert" and domain.dim != 1:
        raise ConfigError("[solver] data = dalembert requires a one-dimensional grid")
    r = cfg.rays
    if r.positions < 1 or r.directions < 1 or r.t_escape <= 0:
        raise ConfigError("[rays] positions, directions and t_escape must be positive")
    resolved = {}
    for key in ("phantom", "speed", "phantom_spec", "speed_spec", "sinogram", "basis"):
        path = getattr(cfg.inputs, key)
        if not path:
            continue
        p = Path(path)
        if not p.is_absolute() and base is not None:
            p = base / p
        if not p.is_file():
            raise ConfigError(f"[inputs] {key} file {p} does not exist")
        resolved[key] = str(p)
    if resolved:
        cfg = replace(cfg, inputs=replace(cfg.inputs, **resolved))
    for key in ("phantom", "speed"):
        path = getattr(cfg.inputs, f"{key}_spec")
        if not path:
            continue
        if getattr(cfg.inputs, key):
            raise ConfigError(f"[inputs] gives both {key} and {key}_spec")
        extra = load_primitive_spec(path)
        cfg = replace(cfg, **{key: getattr(cfg, key) + extra})
    return cfg


def parse_primitive_spec(text: str, source: str = "<spec>") -> PhantomSpec:
    """Primitive list where every section is one primitive, e.g.

    ``[bump]`` then ``kind = gaussian``, ``center = 0.5,0.5``, ``width = 0.1``.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse primitive spec: {exc}") from exc
    return PhantomSpec(tuple(_parse_primitive(name, dict(parser[name])) for name in parser.sections()))


def load_primitive_spec(path: str | os.PathLike) -> PhantomSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read primitive spec {path}: {exc}") from exc
    return parse_primitive_spec(text, str(path))


def load_config(path: str | os.PathLike, env: Mapping[str, str] | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, source=str(p), env=env, base=p.parent)
