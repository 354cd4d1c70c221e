"""Application config: one JSON file driving the CLI and the service.

Relative paths inside the file are resolved against the file's directory.
Every key is optional; see docs/formats.md for the full layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from .core import Method, Terminal
from .errors import ConfigError
from .feature_store import (
    DEFAULT_ALPHA,
    DEFAULT_EVENT_WINDOWS,
    DEFAULT_HALF_LIVES,
    Schema,
    default_schema,
)
from .ml.logistic import LogisticParams
from .ml.tree import ForestParams
from .ml.tuning import GridSpec
from .simulator import (
    ScenarioConfig,
    exploration_scenario,
    heterogeneous_scenario,
    homogeneous_scenario,
)
from .static_router import DEFAULT_DOWNTIME_THRESHOLD, RuleSet

BUILTIN_SCENARIOS = {
    "exploration": exploration_scenario,
    "heterogeneous": heterogeneous_scenario,
    "homogeneous": homogeneous_scenario,
}
MODEL_KEYS = ("forest", "downtime", "manifest")


@dataclass(frozen=True)
class AppConfig:
    half_lives: tuple = DEFAULT_HALF_LIVES
    event_windows: tuple = DEFAULT_EVENT_WINDOWS
    alpha: float = DEFAULT_ALPHA
    rules: str | None = None
    # forest / downtime / manifest paths; outputs of `train` and `select-features`
    models: Mapping = field(default_factory=dict)
    forest: ForestParams = field(default_factory=ForestParams)
    logistic: LogisticParams = field(default_factory=lambda: LogisticParams(class_weight="balanced"))
    grid: GridSpec | None = None
    vif_threshold: float = 5.0
    rfe_target: int = 12
    rfe_drop_fraction: float = 0.1
    test_fraction: float = 0.25
    max_retries: int = 2
    downtime_threshold: float = DEFAULT_DOWNTIME_THRESHOLD
    seed: int = 0
    # builtin scenario name, path to a scenario file, or an inline scenario
    scenario: Any = "exploration"
    ab_scenario: Any = "heterogeneous"
    terminals: tuple | None = None

    def __post_init__(self):
        if not self.half_lives and not self.event_windows:
            raise ConfigError("at least one half-life or event window is required")
        if any(h <= 0 for h in self.half_lives):
            raise ConfigError("half_lives must be positive")
        if any(int(e) != e or e < 1 for e in self.event_windows):
            raise ConfigError("event_windows must be positive integers")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.vif_threshold <= 1:
            raise ConfigError("vif_threshold must exceed 1")
        if self.rfe_target < 1:
            raise ConfigError("rfe_target must be >= 1")
        if not 0 <= self.rfe_drop_fraction < 1:
            raise ConfigError("rfe_drop_fraction must be in [0, 1)")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if not 0 < self.downtime_threshold < 1:
            raise ConfigError("downtime_threshold must be in (0, 1)")
        unknown = set(self.models) - set(MODEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")

    # -- derived objects -------------------------------------------------------

    def schema(self) -> Schema:
        """Feature schema: the selected manifest when one exists, else all templates."""
        manifest = self.models.get("manifest")
        if manifest and os.path.exists(manifest):
            with open(manifest, encoding="utf-8") as fh:
                return Schema.from_manifest(json.load(fh))
        return self.full_schema()

    def full_schema(self) -> Schema:
        return default_schema(self.half_lives, self.event_windows)

    def load_scenario(self, which: str = "scenario") -> ScenarioConfig:
        return _scenario(getattr(self, which))

    def terminal_list(self) -> tuple:
        if self.terminals is not None:
            return self.terminals
        return self.load_scenario().terminals

    def rule_set(self) -> RuleSet:
        if self.rules is None:
            return RuleSet()
        return RuleSet.load(self.rules, self.terminal_list())

    def model_path(self, key: str) -> str:
        path = self.models.get(key)
        if not path:
            raise ConfigError(f"config names no {key} model path")
        return path

    # -- loading ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: str = ".") -> "AppConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)} | {"templates"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")

        def path(p):
            return None if p is None else os.path.normpath(os.path.join(base_dir, p))

        kw: dict = {}
        templates = doc.pop("templates", {})
        if "half_lives" in templates:
            kw["half_lives"] = tuple(float(h) for h in templates["half_lives"])
        if "event_windows" in templates:
            kw["event_windows"] = tuple(templates["event_windows"])
        for name in ("alpha", "vif_threshold", "rfe_target", "rfe_drop_fraction",
                     "test_fraction", "max_retries", "downtime_threshold", "seed"):
            if name in doc:
                kw[name] = doc[name]
        if doc.get("rules") is not None:
            kw["rules"] = path(doc["rules"])
            if not os.path.exists(kw["rules"]):
                raise ConfigError(f"rules file {kw['rules']} does not exist")
        kw["models"] = {k: path(v) for k, v in doc.get("models", {}).items()}
        try:
            if "forest" in doc:
                kw["forest"] = ForestParams(**doc["forest"])
            if "logistic" in doc:
                kw["logistic"] = LogisticParams(**doc["logistic"])
            if doc.get("grid") is not None:
                g = dict(doc["grid"])
                kw["grid"] = GridSpec(grid={k: list(v) for k, v in g.pop("grid").items()},
                                      base=kw.get("forest", ForestParams()), **g)
        except TypeError as exc:
            raise ConfigError(f"bad model parameters: {exc}") from exc
        for which in ("scenario", "ab_scenario"):
            if which in doc:
                spec = doc[which]
                if isinstance(spec, str) and spec not in BUILTIN_SCENARIOS:
                    spec = path(spec)
                    if not os.path.exists(spec):
                        raise ConfigError(f"scenario file {spec} does not exist")
                kw[which] = spec
        if doc.get("terminals") is not None:
            kw["terminals"] = tuple(
                Terminal(t["terminal_id"], t["gateway_id"],
                         frozenset(t.get("methods", [m.value for m in Method])),
                         t.get("enabled", True))
                for t in doc["terminals"]
            )
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "AppConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def with_models(self, **paths) -> "AppConfig":
        return replace(self, models={**self.models, **{k: v for k, v in paths.items() if v}})


def _scenario(spec) -> ScenarioConfig:
    if isinstance(spec, ScenarioConfig):
        return spec
    if isinstance(spec, Mapping):
        return ScenarioConfig.from_dict(spec)
    if spec in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[spec]()
    return ScenarioConfig.load(spec)
