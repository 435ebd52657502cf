"""Flat ``key = value`` run configuration shared by all CLI commands."""

from __future__ import annotations

from dataclasses import dataclass, fields

from . import filtering
from .errors import ConfigError
from .interpolation import InterpolationConfig
from .registration import RegistrationConfig
from .energy import EnergyParams
from .shooting import ShootingConfig


@dataclass
class RunConfig:
    """Every knob of the pipeline with its default.

    Values marked by the model follow the published parameter choices
    (gamma, delta, the smoothing schedule, THRESHOLD); the rest are
    solver defaults.
    """

    u0: str = ""
    u1: str = ""
    uK: str = ""
    out: str = "out"
    steps: int = 8
    segments: int = 8
    spline_level: int = -1          # -1: image level minus one
    gamma: float = 1e-4
    delta: float = 1e-2
    threshold: float = 1e-12
    max_fixed_point_iterations: int = 200
    smoothing: bool = True
    smooth_after_composition: bool = False
    tau0: float = filtering.TAU0
    beta: float = filtering.BETA
    lam: float = filtering.LAMBDA
    coarsest_level: int = 3
    max_iterations: int = 500
    armijo_slope: float = 1e-4
    backtrack: float = 0.5
    grad_tol: float = 1e-8
    restart_period: int = 20
    outer_iterations: int = 10
    energy_tol: float = 1e-6
    reregister: bool = False
    viz: bool = True
    threads: int = 1
    seed: int = 0

    def energy_params(self) -> EnergyParams:
        return EnergyParams(gamma=self.gamma, delta=self.delta)

    def registration_config(self) -> RegistrationConfig:
        return RegistrationConfig(
            coarsest_level=self.coarsest_level,
            max_iterations=self.max_iterations,
            armijo_slope=self.armijo_slope,
            backtrack=self.backtrack,
            grad_tol=self.grad_tol,
            restart_period=self.restart_period)

    def shooting_config(self) -> ShootingConfig:
        return ShootingConfig(
            threshold=self.threshold,
            max_iterations=self.max_fixed_point_iterations,
            smoothing=self.smoothing,
            smooth_after_composition=self.smooth_after_composition,
            tau0=self.tau0, beta=self.beta, lam=self.lam)

    def interpolation_config(self) -> InterpolationConfig:
        return InterpolationConfig(
            segments=self.segments,
            outer_iterations=self.outer_iterations,
            energy_tol=self.energy_tol,
            registration=self.registration_config())


_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _convert(name: str, raw: str, kind: type):
    try:
        if kind is bool:
            key = raw.strip().lower()
            if key not in _BOOL:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL[key]
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def parse(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks skipped."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, raw, kinds[types[key]]))
    return cfg


def load(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not UTF-8: {exc}") from exc


def serialize(cfg: RunConfig) -> str:
    """Normalized text form; stable key order, parse(serialize(c)) == c."""
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if f.type == "bool":
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
