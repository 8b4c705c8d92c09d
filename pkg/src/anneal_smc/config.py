"""Flat ``key = value`` run configuration.

One assignment per line; ``#`` starts a comment.  Values are Python literals
(numbers, quoted strings, tuples, lists, ``None``, ``True``/``False``); any
other value is taken as a bare string::

    driver = ssmc
    target = gaussian_shift
    mu1 = 2.0
    kernel = rwmh_cycle
    step_sizes = (0.1, 1.0, 10.0)
"""

from __future__ import annotations

import ast
import dataclasses
import os
from dataclasses import dataclass, field

__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_config_text", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "ANNEAL_SMC_OUTPUT_DIR"

DRIVERS = ("sais", "ssmc", "ais_zja", "pt", "theory")
TARGETS = ("gaussian_shift", "gaussian_path", "mixture")
KERNELS = ("idealized_exact", "rwmh_cycle", "identity")
POLICIES = ("never", "always", "adaptive_ess", "stabilized")


class ConfigError(ValueError):
    """Invalid configuration; the message names the line and/or key."""


def _default_workers():
    return os.cpu_count() or 1


def _default_output_dir():
    return os.environ.get(OUTPUT_DIR_ENV, "anneal_smc_output")


@dataclass
class RunConfig:
    """Everything that determines a run, together with the seed."""

    driver: str = "ssmc"
    # target
    target: str = "gaussian_shift"
    dim: int = 1
    mu0: float = 0.0
    mu1: float = 1.0
    sigma: float = 1.0
    sigma0: float = 1.0
    sigma1: float = 1.0
    mixture_weights: tuple = (0.5, 0.5)
    mixture_means: tuple = (-3.0, 3.0)
    mixture_sds: tuple = (0.5, 0.5)
    reference_mean: float = 0.0
    reference_sd: float = 4.0
    # kernel
    kernel: str = "idealized_exact"
    step_sizes: tuple = (0.1, 1.0, 10.0)
    sweeps: int = 1
    # resampling
    policy: str = "adaptive_ess"
    rho: float = 0.5
    # sizes
    N: int = None
    T: int = 1
    rounds: int = 5
    iterations: int = 1000
    memory_cap: int = None
    chunk: int = None
    zja_threshold: float = 0.01
    pt_burn_in: float = 0.1
    # theory grid
    theory_D: tuple = (0.5, 1.0, 2.0, 4.0)
    theory_N: tuple = (16, 64, 256, 1024)
    theory_R: tuple = (1.0, 2.0, 4.0, 8.0)
    # plumbing
    seed: int = 0
    workers: int = field(default_factory=_default_workers)
    output_dir: str = field(default_factory=_default_output_dir)
    timing: bool = True

    def validate(self):
        _choice("driver", self.driver, DRIVERS)
        _choice("target", self.target, TARGETS)
        _choice("kernel", self.kernel, KERNELS)
        _choice("policy", self.policy, POLICIES)
        for name in ("dim", "sweeps", "T", "rounds", "iterations", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.N is not None and self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N!r}")
        if self.chunk is not None and self.chunk < 1:
            raise ConfigError(f"chunk must be >= 1, got {self.chunk!r}")
        if self.memory_cap is not None and self.memory_cap < 0:
            raise ConfigError(f"memory_cap must be >= 0, got {self.memory_cap!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho!r}")
        if not 0.0 <= self.pt_burn_in < 1.0:
            raise ConfigError(f"pt_burn_in must lie in [0, 1), got {self.pt_burn_in!r}")
        if not self.zja_threshold > 0:
            raise ConfigError(f"zja_threshold must be > 0, got {self.zja_threshold!r}")
        for name in ("sigma", "sigma0", "sigma1", "reference_sd"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not self.step_sizes or min(self.step_sizes) <= 0:
            raise ConfigError("step_sizes must be a non-empty list of positive numbers")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must lie in [0, 2**64), got {self.seed!r}")
        return self

    @property
    def particles(self) -> int:
        return self.workers if self.N is None else self.N


def _choice(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key} = {value!r} is not one of {', '.join(allowed)}")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, value, lineno):
    where = f"line {lineno}: " if lineno else ""
    f = _FIELDS[key]
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    kind = f.type
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{where}{key} may not be None")
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            raise TypeError
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "tuple":
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = (value,)
            if not isinstance(value, (tuple, list)):
                raise TypeError
            return tuple(float(v) if key != "theory_N" else int(v) for v in value)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"{where}{key} = {value!r} has the wrong type (expected {kind})")


def _literal(text):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, **overrides) -> RunConfig:
    """Parse configuration text; keyword ``overrides`` win over file values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        values[key] = _coerce(key, _literal(value), lineno)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value, None)
    return RunConfig(**values).validate()


def parse_config(path, **overrides) -> RunConfig:
    """Read and validate a configuration file."""
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), **overrides)
