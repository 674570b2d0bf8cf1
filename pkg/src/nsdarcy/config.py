"""Run configuration: sectioned ``key = value`` files with validation."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .diagnostics import critical_weight


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


# section -> {key: (attribute, type)}
_SCHEMA = {
    "geometry": {"nx": int, "ny_fluid": int, "ny_porous": int, "refinements": int},
    "physics": {"k": float, "mu": float, "beta": float, "variant": str, "convective": str},
    "time": {"dt": float, "T": float, "theta": float, "scheme": str},
    "monitors": {"r": float, "q": float, "mu_weight": str, "s_frac": float},
    "io": {"out": str, "snapshot_stride": int},
    "initial": {"kind": str, "amplitude": float, "path": str},
    "run": {"seed": int, "n_eigs": int, "shift": float, "levels": int, "case": int},
}


@dataclass(frozen=True)
class SimConfig:
    # geometry
    nx: int = 4
    ny_fluid: int = 4
    ny_porous: int = 4
    refinements: int = 0
    # physics
    k: float = 1.0
    mu: float = 1.0
    beta: float = 1.0
    variant: str = "bjs"
    convective: str = "convective"  # or "skew" / "off"
    # time
    dt: float = 0.01
    T: float = 1.0
    theta: float = 1.0
    scheme: str = "theta"
    # monitors
    r: float = 2.0
    q: float = 2.0
    mu_weight: float | str = "critical"
    s_frac: float = 1.5
    # io
    out: str = "out"
    snapshot_stride: int = 0
    # initial data
    kind: str = "random"
    amplitude: float = 1.0
    path: str = ""
    # run control
    seed: int = 0
    n_eigs: int = 10
    shift: float = 0.0
    levels: int = 3
    case: int = 1
    _sources: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def mu_weight_value(self) -> float:
        if self.mu_weight == "critical":
            return critical_weight(self.r, self.q)
        return float(self.mu_weight)

    def validate(self) -> "SimConfig":
        def bad(key, msg):
            raise ConfigError(key, msg)

        for key in ("nx", "ny_fluid", "ny_porous"):
            if getattr(self, key) < 1:
                bad(f"geometry.{key}", "must be a positive integer")
        if self.refinements < 0:
            bad("geometry.refinements", "must be nonnegative")
        if not self.k > 0:
            bad("physics.k", "must be positive")
        if not self.mu > 0:
            bad("physics.mu", "must be positive")
        if not self.beta >= 0:
            bad("physics.beta", "must be nonnegative")
        if self.variant not in ("bjs", "bj"):
            bad("physics.variant", "must be 'bjs' or 'bj'")
        if self.convective not in ("convective", "skew", "off"):
            bad("physics.convective", "must be 'convective', 'skew' or 'off'")
        if not self.dt > 0:
            bad("time.dt", "must be positive")
        if not self.T > 0:
            bad("time.T", "must be positive")
        if not 0.5 <= self.theta <= 1.0:
            bad("time.theta", "must lie in [1/2, 1]")
        if self.scheme not in ("theta", "imex"):
            bad("time.scheme", "must be 'theta' or 'imex'")
        if not self.r > 1:
            bad("monitors.r", "must exceed 1")
        if not self.q > 1:
            bad("monitors.q", "must exceed 1")
        if self.mu_weight != "critical":
            try:
                w = float(self.mu_weight)
            except ValueError:
                bad("monitors.mu_weight", "must be a number or 'critical'")
            if not 1.0 / self.r < w <= 1.0:
                bad("monitors.mu_weight", "must lie in (1/r, 1]")
        if not 0 < self.s_frac <= 2:
            bad("monitors.s_frac", "must lie in (0, 2]")
        if self.snapshot_stride < 0:
            bad("io.snapshot_stride", "must be nonnegative")
        if self.kind not in ("zero", "random", "mode", "file"):
            bad("initial.kind", "must be one of zero, random, mode, file")
        if self.kind == "file" and not self.path:
            bad("initial.path", "required when initial.kind = file")
        if self.n_eigs < 1:
            bad("run.n_eigs", "must be positive")
        if self.levels < 1:
            bad("run.levels", "must be positive")
        if self.case not in (1, 2, 3):
            bad("run.case", "must be 1, 2 or 3")
        return self


def _coerce(section: str, key: str, raw: str):
    typ = _SCHEMA[section][key]
    raw = raw.strip()
    if key == "mu_weight":
        return raw if raw == "critical" else _coerce_number(section, key, raw, float)
    if typ is str:
        return raw.lower() if key in ("variant", "scheme", "kind", "convective") else raw
    return _coerce_number(section, key, raw, typ)


def _coerce_number(section, key, raw, typ):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r} as a number") from None
    if typ is int:
        if value != int(value):
            raise ConfigError(f"{section}.{key}", f"expected an integer, got {raw!r}")
        return int(value)
    return value


def _apply(values: dict, section: str, key: str, raw: str) -> None:
    if section not in _SCHEMA:
        raise ConfigError(section, "unknown section")
    if key not in _SCHEMA[section]:
        raise ConfigError(f"{section}.{key}", "unknown key")
    values[key] = _coerce(section, key, raw)


def parse_config_text(text: str, overrides: list[str] | tuple = ()) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", f"parse error: {exc}") from None
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(values, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        _apply(values, section, key, raw)
    return SimConfig(**values).validate()


def parse_config(path, overrides: list[str] | tuple = ()) -> SimConfig:
    """Read and validate a configuration file; a missing path is an error."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("file", f"cannot read {p}")
    return parse_config_text(p.read_text(), overrides)


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw).validate()


def config_keys() -> list[str]:
    return [f"{s}.{k}" for s, keys in _SCHEMA.items() for k in keys]


assert {k for keys in _SCHEMA.values() for k in keys} <= {f.name for f in fields(SimConfig)}
