"""Experiment configuration: defaults, file loading and validation.

Configuration files are YAML mappings whose keys are the field names of
:class:`ExperimentConfig`.  Values given as ``null`` for ``delta``, ``r_a``
and ``d_f`` are derived from the carrier wavelength and the array sizes.

Example file::

    M: 64
    N: 4
    architectures: [ITS, FD]
    sweep_axis: ell
    sweep_values: [1, 2, 3]
    realizations: 5
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .errors import ConfigurationError

SPEED_OF_LIGHT = 2.998e8

ARCHITECTURES = ("ITS", "FD", "HBFC", "HBPC")
SWEEP_AXES = ("none", "N", "M", "ell")
CLUSTER_RULES = ("strongest", "weakest")


@dataclass(frozen=True)
class ExperimentConfig:
    # static power terms (W)
    P_bb: float = 0.2
    P_tc: float = 0.1
    P_ctrl: float = 1.0
    P_cell: float = 1e-3
    # per-device received power target (W)
    P_th: float = 1e-3
    # Doherty amplifier
    P_max: float = 300.0
    eta_max: float = 0.25
    ell: int = 2
    g: float = 100.0
    # radiation and propagation
    mu: float = 10.0
    kappa: float = 2.0
    f_c: float = 5e9
    rho_its: float = 0.45
    # array sizes
    K: int = 4
    M: int = 100
    N: int = 4
    # geometry (m); None means derived from the wavelength
    delta: float | None = None
    r_a: float | None = None
    d_f: float | None = None
    d_x: float = 3.0
    d_y: float = 3.0
    d_z: float = 5.0
    # hybrid RF network losses (dB)
    gamma_s: float = 0.5
    gamma_c: float = 0.5
    gamma_p: float = 3.5
    # experiment control
    architectures: tuple[str, ...] = ARCHITECTURES
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    realizations: int = 100
    seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    # optimizer control
    cluster_rule: str = "strongest"
    max_iterations: int = 50
    tolerance: float = 1e-4
    permutation_cap: int = 100_000

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2 if self.delta is None else self.delta

    @property
    def feeder_radius(self) -> float:
        if self.r_a is not None:
            return 0.0 if self.N == 1 else self.r_a
        if self.N == 1:
            return 0.0
        return self.wavelength / (2 * math.sin(math.pi / self.N))

    @property
    def feeder_distance(self) -> float:
        if self.d_f is not None:
            return self.d_f
        return self.wavelength / 2 * math.sqrt(self.M / math.pi)

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        positive = ["P_th", "P_max", "eta_max", "g", "f_c", "rho_its",
                    "d_x", "d_y", "d_z", "tolerance"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ["P_bb", "P_tc", "P_ctrl", "P_cell", "gamma_s", "gamma_c", "gamma_p"]:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        for name in ["delta", "d_f"]:
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigurationError(f"{name} must be positive when given")
        if self.r_a is not None and self.r_a < 0:
            raise ConfigurationError("r_a must be nonnegative")
        if self.eta_max > 1:
            raise ConfigurationError("eta_max must lie in (0, 1]")
        if self.rho_its > 1:
            raise ConfigurationError("rho_its must lie in (0, 1]")
        if self.mu < 2 or self.kappa < 2:
            raise ConfigurationError("boresight gains mu and kappa must be >= 2")
        for name in ["K", "M", "N", "ell", "realizations", "workers",
                     "max_iterations", "permutation_cap"]:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for arch in self.architectures:
            if arch not in ARCHITECTURES:
                raise ConfigurationError(f"unknown architecture {arch!r}")
        if not self.architectures:
            raise ConfigurationError("at least one architecture is required")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigurationError(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.sweep_axis != "none":
            values = list(self.sweep_values)
            if not values:
                raise ConfigurationError("sweep_values must be nonempty for a sweep")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigurationError("sweep_values must be strictly ascending")
            if any(int(v) != v or v < 1 for v in values):
                raise ConfigurationError("sweep values must be positive integers")
        if self.cluster_rule not in CLUSTER_RULES:
            raise ConfigurationError(f"cluster_rule must be one of {CLUSTER_RULES}")
        if self.seed < 0:
            raise ConfigurationError("seed must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["architectures"] = list(self.architectures)
        out["sweep_values"] = list(self.sweep_values)
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    default = _FIELDS[name].default
    if name in ("delta", "r_a", "d_f"):
        if value is None:
            return None
        return _coerce_float(name, value)
    if name == "architectures":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigurationError("architectures must be a list of names")
        return tuple(v.upper() for v in value)
    if name == "sweep_values":
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError("sweep_values must be a list")
        return tuple(_coerce_float(name, v) for v in value)
    if isinstance(default, bool):
        raise ConfigurationError(f"unsupported boolean field {name}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return _coerce_float(name, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{name} must be a string, got {value!r}")
        return value
    raise ConfigurationError(f"cannot coerce {name}")


def _coerce_float(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigurationError(f"{name} must be finite")
    return value


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """Parse ``key=value`` strings; values are read as YAML scalars/lists."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse override {item!r}: {exc}") from exc
    return out


def merge(base: ExperimentConfig, values: Mapping[str, Any]) -> ExperimentConfig:
    changes = {}
    for key, value in values.items():
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        changes[key] = _coerce(key, value)
    return base.replace(**changes)


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, Any] | Iterable[str] | None = None,
                base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Merge defaults, an optional YAML file and overrides, then validate."""
    cfg = base or ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("config file must contain a mapping")
        cfg = merge(cfg, data)
    if overrides:
        if not isinstance(overrides, Mapping):
            overrides = parse_overrides(overrides)
        cfg = merge(cfg, overrides)
    cfg.validate()
    return cfg


DEFAULTS = ExperimentConfig()
