"""Run configuration shared by the command line and the verification suites.

A configuration file (TOML or JSON) mirrors :meth:`RunConfig.to_json`::

    q = 0.5
    seed = 0

    [window]
    k_min = -6
    k_max = 6

    [grid]
    nodes = 64
    n_max = 4

    [tolerances]
    heldout = 1e-4

    [providers]
    phase = "unit"      # unit | fitted | path to a phase file
    a = "none"          # none | path to an a-provider file

Every key is optional; missing keys keep their defaults.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DomainError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "DEFAULT_TOLERANCES", "ENV_VAR", "load_config_file"]

ENV_VAR = "QSPHERE_CONFIG"

DEFAULT_TOLERANCES = {
    "qseries": 1e-10,
    "continuation": 1e-8,
    "symmetry": 1e-8,
    "discrete": 1e-10,
    "heldout": 1e-4,
    "off_support": 1e-6,
    "nonnegative": 1e-8,
    "normalization": 1e-8,
    "gram_block": 1e-3,
    "gram_full": 5e-3,
    "roundtrip": 1e-3,
    "density_cond": 1e14,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, so that reports can be reproduced.

    ``tolerances`` is stored as a sorted tuple of ``(name, value)`` pairs;
    use :meth:`tol` to read one.
    """

    q: float = 0.5
    k_min: int = -6
    k_max: int = 6
    nodes: int = 64
    n_max: int = 4
    tolerances: tuple = field(default_factory=lambda: tuple(sorted(DEFAULT_TOLERANCES.items())))
    phase_provider: str = "unit"
    a_provider: str = "none"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise DomainError("q must lie in (0, 1)", q=self.q)
        if self.k_min > self.k_max:
            raise DomainError("window needs k_min <= k_max", k_min=self.k_min, k_max=self.k_max)
        if self.nodes < 1 or self.n_max < 0:
            raise DomainError("grid needs nodes >= 1 and n_max >= 0", nodes=self.nodes, n_max=self.n_max)
        for name, value in self.tolerances:
            if name not in DEFAULT_TOLERANCES:
                raise DomainError(f"unknown tolerance {name!r}", tolerance=name, known=sorted(DEFAULT_TOLERANCES))
            if not value > 0:
                raise DomainError("tolerances must be positive", tolerance=name, value=value)

    def tol(self, name: str) -> float:
        return dict(self.tolerances)[name]

    def with_tolerances(self, updates: dict) -> "RunConfig":
        merged = dict(self.tolerances)
        merged.update({k: float(v) for k, v in updates.items()})
        return replace(self, tolerances=tuple(sorted(merged.items())))

    def to_json(self):
        return {
            "q": self.q,
            "window": {"k_min": self.k_min, "k_max": self.k_max},
            "grid": {"nodes": self.nodes, "n_max": self.n_max},
            "tolerances": dict(self.tolerances),
            "providers": {"phase": self.phase_provider, "a": self.a_provider},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj) -> "RunConfig":
        if not isinstance(obj, dict):
            raise DomainError("run configuration must be a mapping")
        known = {"q", "window", "grid", "tolerances", "providers", "seed"}
        extra = set(obj) - known
        if extra:
            raise DomainError("unknown configuration keys", keys=sorted(extra))
        kw = {}
        try:
            if "q" in obj:
                kw["q"] = float(obj["q"])
            if "seed" in obj:
                kw["seed"] = int(obj["seed"])
            win = obj.get("window", {})
            for key in ("k_min", "k_max"):
                if key in win:
                    kw[key] = int(win[key])
            grid = obj.get("grid", {})
            if "nodes" in grid:
                kw["nodes"] = int(grid["nodes"])
            if "n_max" in grid:
                kw["n_max"] = int(grid["n_max"])
            prov = obj.get("providers", {})
            if "phase" in prov:
                kw["phase_provider"] = str(prov["phase"])
            if "a" in prov:
                kw["a_provider"] = str(prov["a"])
            tols = {k: float(v) for k, v in obj.get("tolerances", {}).items()}
        except (TypeError, ValueError, AttributeError) as exc:
            raise DomainError(f"malformed run configuration: {exc}") from exc
        return cls(**kw).with_tolerances(tols)


def load_config_file(path) -> RunConfig:
    """Read a TOML (``.toml``) or JSON file into a :class:`RunConfig`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DomainError(f"cannot read configuration file: {exc}", path=str(path)) from exc
    try:
        if path.suffix.lower() == ".toml":
            obj = tomllib.loads(raw.decode())
        else:
            obj = json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise DomainError(f"cannot parse configuration file: {exc}", path=str(path)) from exc
    return RunConfig.from_json(obj)


def config_from_env(environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    path = environ.get(ENV_VAR)
    return load_config_file(path) if path else RunConfig()
