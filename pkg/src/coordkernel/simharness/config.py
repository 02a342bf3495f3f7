"""Scenario configuration files.

A config is a JSON object. Every key is optional except ``scenario``::

    {
      "scenario": "EconomyGeneral",
      "population": 50,
      "k_domains": 1,
      "epochs": 500,
      "tasks_per_epoch": 100,
      "seeds": [0, 1, 2],
      "failure_p": [0.0, 0.5, 1.0],
      "economy": {"budget": 10000, "orchestration_fee": 0.05, "platform_fee": 0.02,
                  "unlock": [1, 2], "n_users": 100},
      "smmr": {"k": 10, "lambda": 0.7, "sigma": 0.05},
      "output_dir": "out/economy",
      "extra": {}
    }

``extra`` carries scenario-specific knobs (see each runner). Unknown top-level
keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from ..substrate import K_TOOLS, SMMR_LAMBDA, SMMR_SIGMA


class ConfigError(ValueError):
    pass


class Scenario(Enum):
    CLUSTER_EVAL = "ClusterEval"
    SPECIALIZATION = "Specialization"
    ECONOMY_GENERAL = "EconomyGeneral"
    ECONOMY_ROLES = "EconomyRoles"
    ECONOMY_MID_ENTRY = "EconomyMidEntry"
    RESILIENCE = "Resilience"
    NEEDLE = "Needle"
    SCALING_PROBE = "ScalingProbe"

    @classmethod
    def parse(cls, name: str) -> "Scenario":
        key = name.replace("-", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ConfigError(f"unknown scenario {name!r}; expected one of {[s.value for s in cls]}")

    @property
    def slug(self) -> str:
        out = []
        for ch in self.value:
            if ch.isupper() and out:
                out.append("-")
            out.append(ch.lower())
        return "".join(out)


@dataclass(frozen=True)
class EconomyKnobs:
    budget: int = 10_000
    orchestration_fee: float = 0.05
    platform_fee: float = 0.02
    unlock: tuple[int, int] = (1, 2)
    n_users: int = 100


@dataclass(frozen=True)
class SmmrKnobs:
    k: int = K_TOOLS
    lam: float = SMMR_LAMBDA
    sigma: float = SMMR_SIGMA


_ROLE_MARKET = {"task_sigma": 0.3, "k_recruit": 5}

# per-scenario defaults; desk scale, not paper scale
_DEFAULTS: dict[Scenario, dict[str, Any]] = {
    Scenario.CLUSTER_EVAL: {"population": 2000, "k_domains": 50, "seeds": (0, 1, 2, 3, 4)},
    Scenario.SPECIALIZATION: {"population": 1000, "k_domains": 50, "seeds": (0,)},
    Scenario.ECONOMY_GENERAL: {"population": 50, "k_domains": 1, "epochs": 500, "seeds": tuple(range(10))},
    # role markets use tighter task scatter and a wider shortlist than the generic market
    Scenario.ECONOMY_ROLES: {"population": 15, "k_domains": 1, "epochs": 500, "seeds": (0, 1, 2), "extra": _ROLE_MARKET},
    Scenario.ECONOMY_MID_ENTRY: {"population": 15, "k_domains": 1, "epochs": 500, "seeds": (0, 1, 2), "extra": _ROLE_MARKET},
    Scenario.RESILIENCE: {"population": 100, "k_domains": 4, "seeds": (0,)},
    Scenario.NEEDLE: {"population": 100_000, "k_domains": 20, "seeds": (0,)},
    Scenario.SCALING_PROBE: {"population": 10_000, "k_domains": 20, "seeds": (0,)},
}

_TOP_KEYS = {
    "scenario", "population", "k_domains", "epochs", "tasks_per_epoch", "seeds",
    "failure_p", "economy", "smmr", "output_dir", "extra",
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    population: int = 2000
    k_domains: int = 50
    epochs: int = 200
    tasks_per_epoch: int = 100
    seeds: tuple[int, ...] = (0,)
    failure_p: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    economy: EconomyKnobs = field(default_factory=EconomyKnobs)
    smmr: SmmrKnobs = field(default_factory=SmmrKnobs)
    output_dir: str = "out"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.seeds:
            if not 0 <= int(s) < 2**64:
                raise ConfigError(f"seed {s} is not a 64-bit unsigned integer")
        for p in self.failure_p:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"failure probability {p} outside [0, 1]")
        if self.population < 1 or self.k_domains < 1:
            raise ConfigError("population and k_domains must be >= 1")
        if self.epochs < 1 or self.tasks_per_epoch < 1:
            raise ConfigError("epochs and tasks_per_epoch must be >= 1")

    @classmethod
    def default(cls, scenario: Scenario | str) -> "ScenarioConfig":
        sc = scenario if isinstance(scenario, Scenario) else Scenario.parse(scenario)
        d = dict(_DEFAULTS[sc])
        d["extra"] = dict(d.get("extra", {}))
        return cls(scenario=sc, **d)

    def with_seeds(self, *seeds: int) -> "ScenarioConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["seeds"] = list(self.seeds)
        d["failure_p"] = list(self.failure_p)
        d["economy"]["unlock"] = list(self.economy.unlock)
        d["smmr"] = {"k": self.smmr.k, "lambda": self.smmr.lam, "sigma": self.smmr.sigma}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, scenario: Scenario | None = None) -> "ScenarioConfig":
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        name = d.get("scenario")
        if scenario is None:
            if name is None:
                raise ConfigError("config names no scenario")
            scenario = Scenario.parse(name)
        elif name is not None and Scenario.parse(name) is not scenario:
            raise ConfigError(f"config is for {name}, not {scenario.value}")
        base = dict(_DEFAULTS[scenario])
        for key in ("population", "k_domains", "epochs", "tasks_per_epoch", "output_dir"):
            if key in d:
                base[key] = d[key]
        if "seeds" in d:
            base["seeds"] = tuple(int(s) for s in d["seeds"])
        if "failure_p" in d:
            base["failure_p"] = tuple(float(p) for p in d["failure_p"])
        if "economy" in d:
            e = dict(d["economy"])
            if "unlock" in e:
                e["unlock"] = tuple(int(x) for x in e["unlock"])
            try:
                base["economy"] = EconomyKnobs(**e)
            except TypeError as exc:
                raise ConfigError(f"bad economy block: {exc}") from None
        if "smmr" in d:
            s = d["smmr"]
            base["smmr"] = SmmrKnobs(int(s.get("k", K_TOOLS)), float(s.get("lambda", SMMR_LAMBDA)), float(s.get("sigma", SMMR_SIGMA)))
        # scenario-level extras stay unless the file overrides them key by key
        base["extra"] = {**base.get("extra", {}), **d.get("extra", {})}
        return cls(scenario=scenario, **base)


def load_config(path: str | Path, scenario: Scenario | None = None) -> ScenarioConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ScenarioConfig.from_dict(d, scenario)
