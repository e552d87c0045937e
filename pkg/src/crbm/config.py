"""Run configuration: INI-style ``key = value`` sections with ``#`` comments.

Documented keys (defaults in brackets)::

    [scenario]        R2 [1.0]  g0 [0.001]  d [0.09]  mu_min [0.7]  mu_max [1.3]
                      E [15]  nu [0.35]  gamma0_factor [50]  char_length [1.0]
                      friction [none | tresca | coulomb]  s [0.1]  nu_F [0.3]
    [discretization]  h_target [0.01]  degree [2]
    [solver]          delta_u [1e-8]  max_iter [50]  delta_fp [1e-6]  max_outer [100]
    [rom]             N [rank]  pod_tol [unset]
    [eim]             delta_eim [1e-6]  max_terms [unset]
    [sets]            train [0.7:0.0075:61]  n_valid [30]  seed [20240101]  valid_upper [1.18]
    [paths]           store [crbm.store]  reports [reports]
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bench import HertzConfig, ParameterSets, parse_grid
from .eim import EimConfig
from .fem import MaterialParams
from .nitsche import CoulombConfig, FrictionModel, SolverConfig


class ConfigError(ValueError):
    pass


FRICTION_KINDS = ("none", "tresca", "coulomb")


@dataclass
class RunConfig:
    R2: float = 1.0
    g0: float = 0.001
    d: float = 0.09
    mu_min: float = 0.7
    mu_max: float = 1.3
    E: float = 15.0
    nu: float = 0.35
    gamma0_factor: float = 50.0
    char_length: float = 1.0
    friction: str = "none"
    s: float = 0.1
    nu_F: float = 0.3
    h_target: float = 0.01
    degree: int = 2
    delta_u: float = 1e-8
    max_iter: int = 50
    delta_fp: float = 1e-6
    max_outer: int = 100
    N: int | None = None
    pod_tol: float | None = None
    delta_eim: float = 1e-6
    max_terms: int | None = None
    train: str = "0.7:0.0075:61"
    n_valid: int = 30
    seed: int = 20240101
    valid_upper: float = 1.18
    store: str = "crbm.store"
    reports: str = "reports"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.friction not in FRICTION_KINDS:
            raise ConfigError(f"friction must be one of {FRICTION_KINDS}, got {self.friction!r}")
        checks = [
            (self.R2 > 0, "R2 must be positive"),
            (self.g0 >= 0, "g0 must be non-negative"),
            (self.d >= self.g0, "d must be at least g0"),
            (0 < self.mu_min <= self.mu_max, "need 0 < mu_min <= mu_max"),
            (self.E > 0 and 0 < self.nu < 0.5, "material parameters out of range"),
            (self.gamma0_factor > 0, "gamma0_factor must be positive"),
            (self.h_target > 0, "h_target must be positive"),
            (self.degree in (1, 2), "degree must be 1 or 2"),
            (self.delta_u > 0 and self.max_iter >= 1, "invalid Newton settings"),
            (self.delta_fp > 0 and self.max_outer >= 1, "invalid fixed-point settings"),
            (self.delta_eim > 0, "delta_eim must be positive"),
            (self.N is None or self.N >= 1, "N must be at least 1"),
            (self.s >= 0 and self.nu_F > 0, "friction parameters out of range"),
            (self.n_valid >= 0, "n_valid must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        mus = self.training_grid()
        if len(mus) == 0 or mus.min() < self.mu_min - 1e-12 or mus.max() > self.mu_max + 1e-12:
            raise ConfigError(f"training grid {self.train!r} must be nonempty and inside [mu_min, mu_max]")

    # -- derived objects ----------------------------------------------------------

    def training_grid(self) -> np.ndarray:
        try:
            return parse_grid(self.train)
        except ValueError as exc:
            raise ConfigError(f"bad training grid {self.train!r}: {exc}") from exc

    def friction_model(self) -> FrictionModel:
        if self.friction == "tresca":
            return FrictionModel.tresca(self.s)
        if self.friction == "coulomb":
            return FrictionModel.coulomb(self.nu_F)
        return FrictionModel.frictionless()

    def hertz(self) -> HertzConfig:
        return HertzConfig(
            R2=self.R2, g0=self.g0, d=self.d, mu_range=(self.mu_min, self.mu_max),
            material=MaterialParams(self.E, self.nu), gamma0_factor=self.gamma0_factor,
            friction=self.friction_model(), h_target=self.h_target, degree=self.degree,
            char_length=self.char_length,
        )

    def parameter_sets(self) -> ParameterSets:
        return ParameterSets.standard(self.seed, self.train, self.n_valid, (self.mu_min, self.mu_max))

    def solver(self) -> SolverConfig:
        return SolverConfig(self.delta_u, self.max_iter)

    def coulomb(self) -> CoulombConfig:
        # plain generalized Newton cycles on these Tresca subproblems; globalize them
        return CoulombConfig(self.delta_fp, self.max_outer, replace(self.solver(), line_search=True))

    def eim(self) -> EimConfig:
        return EimConfig(self.delta_eim, self.max_terms)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # -- text form ----------------------------------------------------------------

    def to_text(self) -> str:
        """Canonical text form; ``load_config_text(cfg.to_text()) == cfg``."""
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            for key in keys:
                value = getattr(self, key)
                if value is not None:
                    lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = {
    "scenario": ("R2", "g0", "d", "mu_min", "mu_max", "E", "nu", "gamma0_factor", "char_length",
                 "friction", "s", "nu_F"),
    "discretization": ("h_target", "degree"),
    "solver": ("delta_u", "max_iter", "delta_fp", "max_outer"),
    "rom": ("N", "pod_tol"),
    "eim": ("delta_eim", "max_terms"),
    "sets": ("train", "n_valid", "seed", "valid_upper"),
    "paths": ("store", "reports"),
}

_INT_KEYS = {"degree", "max_iter", "max_outer", "N", "max_terms", "n_valid", "seed"}
_STR_KEYS = {"friction", "train", "store", "reports"}


def load_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_config_text(text)


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    try:
        return int(raw) if key in _INT_KEYS else float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} = {raw!r} is not a number") from exc
