"""Scenario configuration files (YAML) with a strict schema.

Every mapping is loaded into a dataclass; unknown keys are rejected with
their dotted path so typos fail before any computation starts.
"""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCENARIOS = ("modes_2p", "node_dirichlet", "node_periodic", "degenerate_cube",
             "oscillators_linbad", "wave_separation", "nudge", "takens_pipeline",
             "phi_reduction", "feedback")

OUTPUT_ROOT_ENV = "DETFUNC_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class NonlinearityConfig:
    kind: str = "zero"
    name: str = ""
    coefficient: float = 1.0
    modes: int = 0


@dataclass
class ProblemConfig:
    preset: str = "dirichlet_heat"
    m_grid: int = 32
    nu: float = 1.0
    domain_length: float = math.pi
    alpha: float = 0.0
    nonlinearity: NonlinearityConfig = field(default_factory=NonlinearityConfig)
    radius_factor: float | None = None
    cutoff_radius: float | None = None
    forcing: list | None = None
    eps_shift: float = 1e-2
    eigenvalues: list | None = None
    potential: object = 0.0


@dataclass
class RunConfig:
    dt: float = 1e-2
    t_end: float = 10.0
    burn_in: float | None = None
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class ScenarioConfig:
    scenario: str
    output_dir: str = "runs"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    functionals: list = field(default_factory=list)
    run: RunConfig = field(default_factory=RunConfig)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def output_root(self) -> Path:
        """``output_dir``, relocated under ``$DETFUNC_OUTPUT_ROOT`` when that is set."""
        env = os.environ.get(OUTPUT_ROOT_ENV)
        if env:
            return Path(env) / Path(self.output_dir).name
        return Path(self.output_dir)


_NESTED = {
    (ProblemConfig, "nonlinearity"): NonlinearityConfig,
    (ScenarioConfig, "problem"): ProblemConfig,
    (ScenarioConfig, "run"): RunConfig,
}


def from_mapping(cls, data, where: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {_join(where, key)!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = _NESTED.get((cls, f.name))
        v = data[f.name]
        kwargs[f.name] = from_mapping(sub, v, _join(where, f.name)) if sub else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _join(where: str, key) -> str:
    return f"{where}.{key}" if where else str(key)


def parse_config(data) -> ScenarioConfig:
    if not isinstance(data, dict) or "scenario" not in data:
        raise ConfigError("config must be a mapping with a 'scenario' key")
    cfg = from_mapping(ScenarioConfig, data)
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; expected one of {', '.join(SCENARIOS)}")
    if not isinstance(cfg.functionals, list):
        raise ConfigError("functionals must be a list")
    if not isinstance(cfg.params, dict):
        raise ConfigError("params must be a mapping")
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data)
