"""Experiment configuration: a flat, diffable key-value file.

The format is INI-style: one ``[experiment]`` section with the environment
and run parameters, plus one ``[agent:<name>]`` section per policy.  Keys
are typed and closed -- unknown keys or sections are errors with the
offending line reported, so typos never silently change an experiment.
The schema is versioned and a parsed config round-trips losslessly through
``to_text``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .agents import AGENT_KINDS, RETRAIN_SCHEDULES, AgentConfig
from .core import TRANSFORM_IDS

__all__ = ["ExperimentConfig", "ConfigError", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

_SETTINGS = ("concurrent", "sequential")
_ENVS = ("linear", "nonlinear")


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def _line_of(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _fail(text: str, needle: str, message: str) -> None:
    line = _line_of(text, needle)
    where = f" (line {line})" if line is not None else ""
    raise ConfigError(f"{message}{where}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: setting, environment dimensions, agents and seeds."""

    setting: str = "concurrent"
    env: str = "linear"
    M: int = 50
    K: int = 5
    N: int = 50
    T: int = 50
    d_m: int = 3
    d_k: int = 3
    sigma_m: float = 0.75
    sigma_eps: float = 1.0
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "out"
    agents: tuple[AgentConfig, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.setting not in _SETTINGS:
            raise ConfigError(f"setting must be one of {_SETTINGS}, got {self.setting!r}")
        if self.env not in _ENVS:
            raise ConfigError(f"env must be one of {_ENVS}, got {self.env!r}")
        for name in ("M", "K", "N", "T", "d_m", "d_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.sigma_m < 0:
            raise ConfigError("sigma_m must be >= 0")
        if not self.sigma_eps > 0:
            raise ConfigError("sigma_eps must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.agents:
            raise ConfigError("at least one [agent:<name>] section is required")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError(f"agent names must be distinct, got {names}")

    @property
    def default_schedule(self) -> str:
        return "per_campaign" if self.setting == "sequential" else "daily_batch"

    # -- serialization ---------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "[experiment]",
            f"schema_version = {SCHEMA_VERSION}",
            f"setting = {self.setting}",
            f"env = {self.env}",
            f"M = {self.M}",
            f"K = {self.K}",
            f"N = {self.N}",
            f"T = {self.T}",
            f"d_m = {self.d_m}",
            f"d_k = {self.d_k}",
            f"sigma_m = {self.sigma_m!r}",
            f"sigma_eps = {self.sigma_eps!r}",
            "seeds = " + ",".join(str(s) for s in self.seeds),
            f"output_dir = {self.output_dir}",
        ]
        for a in self.agents:
            lines.append("")
            lines.append(f"[agent:{a.name}]")
            lines.append(f"kind = {a.kind}")
            defaults = AgentConfig(name=a.name, kind=a.kind)
            for f in fields(AgentConfig):
                if f.name in ("name", "kind"):
                    continue
                value = getattr(a, f.name)
                if value != getattr(defaults, f.name):
                    out = repr(value) if isinstance(value, float) else str(value)
                    lines.append(f"{f.name} = {out}")
        return "\n".join(lines) + "\n"

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if "experiment" not in parser:
            raise ConfigError("missing [experiment] section")
        for section in parser.sections():
            if section != "experiment" and not section.startswith("agent:"):
                _fail(text, f"[{section}]", f"unknown section [{section}]")

        exp = dict(parser["experiment"])
        version = exp.pop("schema_version", None)
        if version is None:
            _fail(text, "[experiment]", "missing required key schema_version")
        if int(version) != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {version} unsupported (expected {SCHEMA_VERSION})"
            )

        kwargs: dict = {}
        for raw_key in list(exp):
            value = exp.pop(raw_key)
            key = raw_key
            if key in ("M", "K", "N", "T", "d_m", "d_k"):
                kwargs[key] = _parse_int(text, raw_key, value)
            elif key in ("setting", "env", "output_dir"):
                kwargs[key] = value
            elif key in ("sigma_m", "sigma_eps"):
                kwargs[key] = _parse_float(text, raw_key, value)
            elif key == "seeds":
                kwargs["seeds"] = parse_seed_spec(value)
            else:
                _fail(text, raw_key, f"unknown key {raw_key!r} in [experiment]")

        for required in ("sigma_m", "sigma_eps"):
            if required not in kwargs:
                _fail(text, "[experiment]", f"missing required key {required}")

        agents = []
        for section in parser.sections():
            if not section.startswith("agent:"):
                continue
            name = section.split(":", 1)[1]
            if not name:
                _fail(text, f"[{section}]", "agent section needs a name: [agent:<name>]")
            agents.append(_parse_agent(text, name, dict(parser[section])))
        kwargs["agents"] = tuple(agents)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_int(text: str, key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        _fail(text, key, f"key {key!r} must be an integer, got {value!r}")


def _parse_float(text: str, key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        _fail(text, key, f"key {key!r} must be a number, got {value!r}")


def _parse_bool(text: str, key: str, value: str) -> bool:
    low = value.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    _fail(text, key, f"key {key!r} must be a boolean, got {value!r}")


def parse_seed_spec(value: str) -> tuple[int, ...]:
    """Either a count (``100`` means seeds 0..99) or an explicit list."""
    value = value.strip()
    if "," in value:
        seeds = tuple(int(v) for v in value.split(",") if v.strip() != "")
    else:
        count = int(value)
        if count < 1:
            raise ConfigError("seed count must be >= 1")
        seeds = tuple(range(count))
    return seeds


_AGENT_KEY_TYPES = {
    "kind": str,
    "kernel": str,
    "retrain": str,
    "sigma_m": float,
    "noise_sd": float,
    "transform": str,
    "gamma_prior_sd": float,
    "rbf_lengthscale": float,
    "nn_depth": int,
    "nn_width": int,
    "nn_regularization": float,
    "nn_learning_rate": float,
    "ntk_refresh": bool,
    "collapse_threshold": int,
    "prior_var": float,
    "augment_count": int,
}


def _parse_agent(text: str, name: str, raw: dict[str, str]) -> AgentConfig:
    if "kind" not in raw:
        _fail(text, f"[agent:{name}]", f"agent {name!r} is missing required key kind")
    kwargs: dict = {"name": name}
    for key, value in raw.items():
        if key not in _AGENT_KEY_TYPES:
            _fail(text, key, f"unknown key {key!r} in [agent:{name}]")
        typ = _AGENT_KEY_TYPES[key]
        if typ is int:
            kwargs[key] = _parse_int(text, key, value)
        elif typ is float:
            kwargs[key] = _parse_float(text, key, value)
        elif typ is bool:
            kwargs[key] = _parse_bool(text, key, value)
        else:
            kwargs[key] = value
    kind = kwargs.get("kind")
    if kind not in AGENT_KINDS:
        _fail(text, str(kind), f"agent {name!r} has unknown kind {kind!r}")
    retrain = kwargs.get("retrain")
    if retrain is not None and retrain not in RETRAIN_SCHEDULES:
        _fail(text, retrain, f"agent {name!r} has unknown retrain {retrain!r}")
    transform = kwargs.get("transform")
    if transform is not None and transform not in TRANSFORM_IDS:
        _fail(text, transform, f"agent {name!r} has unknown transform {transform!r}")
    try:
        return AgentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"agent {name!r}: {exc}") from exc
