"""First routing stage: merchant business rules, then gateway-downtime filtering."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import Method, PaymentRequest, Terminal
from .errors import ConfigError, ModelFormatError, NoEligibleTerminalsError
from .feature_store import FeatureStore, Schema
from .ml.dataset import Dataset
from .ml.logistic import LogisticParams, TrainedLogistic, logistic_probability, train_logistic
from .ml.persistence import FORMAT, VERSION, logistic_from, logistic_payload

log = logging.getLogger(__name__)

DEFAULT_DOWNTIME_THRESHOLD = 0.5
RULE_FIELDS = {"allow_terminals", "deny_terminals", "deny_gateways", "methods"}


@dataclass(frozen=True)
class MerchantRule:
    allow_terminals: frozenset | None = None
    deny_terminals: frozenset = frozenset()
    deny_gateways: frozenset = frozenset()
    # payment methods this rule applies to; None means all
    methods: frozenset | None = None

    def applies_to(self, method: Method) -> bool:
        return self.methods is None or method in self.methods

    @classmethod
    def from_dict(cls, merchant: str, d: Mapping) -> "MerchantRule":
        unknown = set(d) - RULE_FIELDS
        if unknown:
            raise ConfigError(f"merchant {merchant}: unknown rule fields {sorted(unknown)}")
        allow = d.get("allow_terminals")
        rule = cls(
            allow_terminals=None if allow is None else frozenset(allow),
            deny_terminals=frozenset(d.get("deny_terminals", ())),
            deny_gateways=frozenset(d.get("deny_gateways", ())),
            methods=None if d.get("methods") is None else frozenset(Method(m) for m in d["methods"]),
        )
        if rule.allow_terminals and rule.allow_terminals & rule.deny_terminals:
            overlap = sorted(rule.allow_terminals & rule.deny_terminals)
            raise ConfigError(f"merchant {merchant}: terminals both allowed and denied: {overlap}")
        return rule

    def to_dict(self) -> dict:
        d = {
            "deny_terminals": sorted(self.deny_terminals),
            "deny_gateways": sorted(self.deny_gateways),
        }
        if self.allow_terminals is not None:
            d["allow_terminals"] = sorted(self.allow_terminals)
        if self.methods is not None:
            d["methods"] = sorted(m.value for m in self.methods)
        return d


class RuleSet:
    """Per-merchant business rules. Immutable; reload by building a new one."""

    def __init__(self, rules: Mapping[str, Sequence[MerchantRule]] | None = None):
        self._rules = {m: tuple(r) for m, r in (rules or {}).items()}

    def for_merchant(self, merchant_id: str) -> tuple:
        return self._rules.get(merchant_id, ())

    def __len__(self):
        return len(self._rules)

    @classmethod
    def from_dict(cls, doc: Mapping, terminals: Iterable[Terminal] = ()) -> "RuleSet":
        """Parse ``{merchant_id: rule | [rule, ...]}`` and check referenced ids."""
        rules = {}
        for merchant, entry in doc.items():
            entries = entry if isinstance(entry, list) else [entry]
            rules[merchant] = [MerchantRule.from_dict(merchant, e) for e in entries]
        ruleset = cls(rules)
        terminals = list(terminals)
        if terminals:
            ruleset.warn_unknown(terminals)
        return ruleset

    @classmethod
    def load(cls, path, terminals: Iterable[Terminal] = ()) -> "RuleSet":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid rules file ({exc})") from exc
        return cls.from_dict(doc, terminals)

    def to_dict(self) -> dict:
        return {m: [r.to_dict() for r in rs] for m, rs in self._rules.items()}

    def warn_unknown(self, terminals: Iterable[Terminal]) -> list[str]:
        tids = {t.terminal_id for t in terminals}
        gids = {t.gateway_id for t in terminals}
        problems = []
        for merchant, rules in self._rules.items():
            for r in rules:
                for tid in sorted((r.allow_terminals or frozenset()) | r.deny_terminals):
                    if tid not in tids:
                        problems.append(f"merchant {merchant}: unknown terminal {tid}")
                for gid in sorted(r.deny_gateways):
                    if gid not in gids:
                        problems.append(f"merchant {merchant}: unknown gateway {gid}")
        for p in problems:
            log.warning("rules: %s", p)
        return problems


def apply_rules(rules: RuleSet, request: PaymentRequest,
                terminals: Sequence[Terminal]) -> list[Terminal]:
    """Order-preserving filter by enablement, method support and merchant rules."""
    active = [r for r in rules.for_merchant(request.merchant_id) if r.applies_to(request.method)]
    out = []
    for t in terminals:
        if not t.enabled or not t.supports(request.method):
            continue
        if any(t.terminal_id in r.deny_terminals or t.gateway_id in r.deny_gateways
               for r in active):
            continue
        if any(r.allow_terminals is not None and t.terminal_id not in r.allow_terminals
               for r in active):
            continue
        out.append(t)
    return out


# ---------------------------------------------------------------------------
# gateway downtime


@dataclass(frozen=True)
class DowntimeModel:
    model: TrainedLogistic
    schema: Schema
    threshold: float = DEFAULT_DOWNTIME_THRESHOLD

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError(f"downtime threshold must be in (0, 1), got {self.threshold}")
        if self.model.schema_id != self.schema.schema_id:
            raise ConfigError("downtime logistic was trained on a different schema")
        bad = [t.name for t in self.schema if not set(t.attributes) <= {"gateway_id"}]
        if bad:
            raise ConfigError(f"downtime schema has non-gateway templates: {bad}")

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "kind": "downtime",
            "schema_id": self.model.schema_id,
            "feature_names": list(self.model.feature_names),
            "params": self.model.params.to_dict(),
            "threshold": self.threshold,
            "payload": logistic_payload(self.model),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DowntimeModel":
        if doc.get("format") != FORMAT or doc.get("kind") != "downtime":
            raise ModelFormatError("not a downtime model file")
        if doc.get("version") != VERSION:
            raise ModelFormatError(f"unsupported model version {doc.get('version')}")
        schema = Schema.from_manifest({"templates": doc["feature_names"]})
        return cls(logistic_from(doc), schema, float(doc["threshold"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DowntimeModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_downtime_model(ds: Dataset, schema: Schema,
                         params: LogisticParams = LogisticParams(class_weight="balanced"),
                         threshold: float = DEFAULT_DOWNTIME_THRESHOLD) -> DowntimeModel:
    if ds.schema_id != schema.schema_id:
        raise ConfigError("downtime dataset does not match the downtime schema")
    return DowntimeModel(train_logistic(ds, params), schema, threshold)


def down_probability(m: DowntimeModel, store: FeatureStore, gateway_id: str, ts: float) -> float:
    return logistic_probability(m.model, store.gateway_vector(gateway_id, ts, m.schema))


def predict_gateway_down(m: DowntimeModel, store: FeatureStore, gateway_id: str,
                         ts: float) -> bool:
    return down_probability(m, store, gateway_id, ts) > m.threshold


@dataclass(frozen=True)
class StaticResult:
    terminals: tuple
    degraded: bool = False
    down_gateways: tuple = ()


def static_filter(request: PaymentRequest, terminals: Sequence[Terminal], rules: RuleSet,
                  model: DowntimeModel | None, store: FeatureStore, ts: float) -> StaticResult:
    """Rule filter, then drop terminals of gateways predicted down.

    If downtime filtering would leave nothing, the rule-filtered list is
    returned with ``degraded`` set rather than refusing the payment.
    """
    allowed = apply_rules(rules, request, terminals)
    if not allowed:
        raise NoEligibleTerminalsError(
            f"no terminal passes the rules for payment {request.payment_id}"
        )
    if model is None:
        return StaticResult(tuple(allowed))
    down = {}
    for t in allowed:
        if t.gateway_id not in down:
            down[t.gateway_id] = predict_gateway_down(model, store, t.gateway_id, ts)
    down_gateways = tuple(sorted(g for g, is_down in down.items() if is_down))
    healthy = [t for t in allowed if not down[t.gateway_id]]
    if down_gateways:
        log.debug("payment %s: gateways predicted down %s", request.payment_id, down_gateways)
    if not healthy:
        log.info("payment %s: every gateway predicted down, routing in degraded mode",
                 request.payment_id)
        return StaticResult(tuple(allowed), True, down_gateways)
    return StaticResult(tuple(healthy), False, down_gateways)
