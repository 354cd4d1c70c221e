"""Seeded synthetic payment environment and the random-vs-smart A/B harness.

Everything the simulator produces is a pure function of the scenario config
and its seed: one ``numpy`` generator is threaded through payment generation,
attempt outcomes and the random arm's choices in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (
    NO_ROUTE,
    LogRecord,
    Method,
    Outcome,
    PaymentRequest,
    Status,
    Terminal,
)
from .dynamic_router import RandomRouter, Router, forest_schema
from .errors import ConfigError, NoEligibleTerminalsError
from .feature_store import DEFAULT_ALPHA, FeatureStore, Schema, default_schema
from .ml.dataset import build_downtime_set, build_training_set
from .ml.forest import TrainedForest, train_forest
from .ml.logistic import LogisticParams
from .ml.tree import ForestParams
from .static_router import (DEFAULT_DOWNTIME_THRESHOLD, DowntimeModel, RuleSet,
                            train_downtime_model)

DEFAULT_BUCKET = 500
DEFAULT_START_TS = 1_629_829_802
ARMS = ("random", "smart")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DowntimeWindow:
    start: float
    end: float
    success_prob: float = 0.0

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end


@dataclass(frozen=True)
class TerminalProfile:
    terminal_id: str
    base_success_prob: float = 0.9
    # {(method, issuer_bank): success probability}
    pair_success: Mapping = field(default_factory=dict)
    customer_failure_rate: float = 0.0
    downtime_windows: tuple = ()
    drift_amplitude: float = 0.0
    drift_period: float = 0.0

    def __post_init__(self):
        probs = [self.base_success_prob, self.customer_failure_rate,
                 *self.pair_success.values(), *(w.success_prob for w in self.downtime_windows)]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError(f"terminal {self.terminal_id}: probabilities must lie in [0, 1]")
        windows = sorted(self.downtime_windows, key=lambda w: w.start)
        for a, b in zip(windows, windows[1:]):
            if b.start < a.end:
                raise ConfigError(f"terminal {self.terminal_id}: overlapping downtime windows")
        object.__setattr__(self, "downtime_windows", tuple(windows))
        if self.drift_amplitude and self.drift_period <= 0:
            raise ConfigError(f"terminal {self.terminal_id}: drift needs a positive period")

    def outage_at(self, ts: float) -> DowntimeWindow | None:
        for w in self.downtime_windows:
            if w.contains(ts):
                return w
        return None


def effective_probability(profile: TerminalProfile, request: PaymentRequest, ts: float) -> float:
    """Success probability of a non-customer-failed attempt at ``ts``."""
    window = profile.outage_at(ts)
    if window is not None:
        return window.success_prob
    p = profile.pair_success.get((request.method.value, request.issuer_bank),
                                 profile.base_success_prob)
    if profile.drift_amplitude:
        p *= 1.0 + profile.drift_amplitude * math.sin(2 * math.pi * ts / profile.drift_period)
    return min(1.0, max(0.0, p))


def _distribution(name: str, d: Mapping[str, float]) -> tuple[tuple, np.ndarray]:
    if not d:
        raise ConfigError(f"{name} distribution is empty")
    # sorted so a scenario draws the same stream however its JSON keys were ordered
    keys = tuple(sorted(d))
    p = np.asarray([d[k] for k in keys], dtype=float)
    if (p < 0).any() or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ConfigError(f"{name} distribution must be non-negative and sum to 1")
    return keys, p / p.sum()


@dataclass(frozen=True)
class ScenarioConfig:
    terminals: tuple
    profiles: Mapping
    merchants: Mapping = field(default_factory=lambda: {"m1": 1.0})
    methods: Mapping = field(default_factory=lambda: {"card": 1.0})
    issuer_banks: Mapping = field(default_factory=lambda: {"bankA": 1.0})
    networks: Mapping = field(default_factory=lambda: {"visa": 1.0})
    amount_log_mean: float = 7.0
    amount_log_sigma: float = 1.0
    arrival_rate: float = 5.0
    arrival: str = "poisson"
    n_payments: int = 1000
    start_ts: int = DEFAULT_START_TS
    seed: int = 0
    rules: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "terminals", tuple(self.terminals))
        ids = [t.terminal_id for t in self.terminals]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate terminal ids")
        missing = [i for i in ids if i not in self.profiles]
        if missing:
            raise ConfigError(f"terminals without profiles: {missing}")
        for name in ("merchants", "methods", "issuer_banks", "networks"):
            _distribution(name, getattr(self, name))
        for m in self.methods:
            Method(m)
        if self.arrival not in ("poisson", "fixed"):
            raise ConfigError(f"arrival must be 'poisson' or 'fixed', got {self.arrival!r}")
        if not self.arrival_rate > 0:
            raise ConfigError("arrival_rate must be positive")
        if self.n_payments < 0:
            raise ConfigError("n_payments must be >= 0")
        if self.amount_log_sigma < 0:
            raise ConfigError("amount_log_sigma must be >= 0")

    def ts_of_payment(self, index: int) -> int:
        """Arrival second of payment ``index`` (expected value under Poisson arrivals)."""
        return self.start_ts + int(index / self.arrival_rate)

    def gateway_terminals(self, gateway_id: str) -> list[str]:
        return [t.terminal_id for t in self.terminals if t.gateway_id == gateway_id]

    def rule_set(self) -> RuleSet:
        return RuleSet.from_dict(self.rules, self.terminals)

    # -- structured text ------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioConfig":
        """Build from the JSON scenario layout documented in docs/formats.md."""
        doc = dict(doc)
        amount = doc.pop("amount", {})
        term_docs = doc.pop("terminals")
        outages = doc.pop("outages", [])
        base = cls(terminals=(), profiles={}, **{k: v for k, v in doc.items()
                                                 if k in _SCALAR_KEYS},
                   amount_log_mean=amount.get("log_mean", 7.0),
                   amount_log_sigma=amount.get("log_sigma", 1.0))
        unknown = set(doc) - _SCALAR_KEYS
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        terminals, windows, profiles = [], {}, {}
        for td in term_docs:
            t = Terminal(td["terminal_id"], td["gateway_id"],
                         frozenset(td.get("methods", [m.value for m in Method])),
                         td.get("enabled", True))
            terminals.append(t)
            windows[t.terminal_id] = [DowntimeWindow(w["start"], w["end"], w.get("success_prob", 0.0))
                                      for w in td.get("downtime_windows", [])]
        for od in outages:
            if "start_payment" in od:
                start, end = base.ts_of_payment(od["start_payment"]), base.ts_of_payment(od["end_payment"])
            else:
                start, end = od["start"], od["end"]
            tids = [t.terminal_id for t in terminals if t.gateway_id == od["gateway_id"]]
            if not tids:
                raise ConfigError(f"outage on unknown gateway {od['gateway_id']}")
            for tid in tids:
                windows[tid].append(DowntimeWindow(start, end, od.get("success_prob", 0.0)))
        for td in term_docs:
            drift = td.get("drift", {})
            pairs = {(p["method"], p["issuer_bank"]): p["p"] for p in td.get("pair_success", [])}
            profiles[td["terminal_id"]] = TerminalProfile(
                td["terminal_id"], td.get("success_prob", 0.9), pairs,
                td.get("customer_failure_rate", 0.0), tuple(windows[td["terminal_id"]]),
                drift.get("amplitude", 0.0), drift.get("period", 0.0),
            )
        return replace(base, terminals=tuple(terminals), profiles=profiles)

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in sorted(_SCALAR_KEYS)}
        doc = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in doc.items()}
        doc["amount"] = {"log_mean": self.amount_log_mean, "log_sigma": self.amount_log_sigma}
        terms = []
        for t in self.terminals:
            p = self.profiles[t.terminal_id]
            td = {
                "terminal_id": t.terminal_id,
                "gateway_id": t.gateway_id,
                "methods": sorted(m.value for m in t.supported_methods),
                "enabled": t.enabled,
                "success_prob": p.base_success_prob,
                "customer_failure_rate": p.customer_failure_rate,
                "pair_success": [{"method": m, "issuer_bank": b, "p": v}
                                 for (m, b), v in p.pair_success.items()],
                "downtime_windows": [{"start": w.start, "end": w.end, "success_prob": w.success_prob}
                                     for w in p.downtime_windows],
            }
            if p.drift_amplitude:
                td["drift"] = {"amplitude": p.drift_amplitude, "period": p.drift_period}
            terms.append(td)
        doc["terminals"] = terms
        return doc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


_SCALAR_KEYS = {"merchants", "methods", "issuer_banks", "networks", "arrival_rate", "arrival",
                "n_payments", "start_ts", "seed", "rules"}


# ---------------------------------------------------------------------------
# traffic and outcomes


class PaymentStream:
    """Iterator of (index, request) pairs drawn from a scenario's distributions."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._dists = {name: _distribution(name, getattr(cfg, name))
                       for name in ("merchants", "methods", "issuer_banks", "networks")}
        self._clock = 0.0
        self.index = 0

    def _next_ts(self) -> int:
        if self.cfg.arrival == "fixed":
            ts = self.cfg.ts_of_payment(self.index)
        else:
            ts = self.cfg.start_ts + int(self._clock)
            self._clock += self.rng.exponential(1.0 / self.cfg.arrival_rate)
        return ts

    def next(self) -> PaymentRequest:
        ts = self._next_ts()
        req = generate_payment(self.cfg, self.rng, ts, self.index, self._dists)
        self.index += 1
        return req


def _draw(rng: np.random.Generator, dist: tuple) -> str:
    keys, p = dist
    if len(keys) == 1:
        rng.random()  # keep the draw count independent of distribution shape
        return keys[0]
    return keys[int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, len(keys) - 1))]


def generate_payment(cfg: ScenarioConfig, rng: np.random.Generator, ts: int, index: int,
                     dists: Mapping | None = None) -> PaymentRequest:
    """Draw one payment's attributes; ids are ``pay_<index>`` so they are unique per run."""
    if dists is None:
        dists = {name: _distribution(name, getattr(cfg, name))
                 for name in ("merchants", "methods", "issuer_banks", "networks")}
    merchant = _draw(rng, dists["merchants"])
    method = _draw(rng, dists["methods"])
    bank = _draw(rng, dists["issuer_banks"])
    network = _draw(rng, dists["networks"])
    amount = math.exp(cfg.amount_log_mean + cfg.amount_log_sigma * rng.standard_normal())
    return PaymentRequest(
        payment_id=f"pay_{index:07d}",
        timestamp=int(ts),
        merchant_id=merchant,
        method=Method(method),
        issuer_bank=bank,
        network=network,
        amount=max(1, int(round(amount))),
    )


def simulate_attempt(profile: TerminalProfile, request: PaymentRequest, ts: float,
                     rng: np.random.Generator) -> Outcome:
    """Customer failure first, then success with the effective probability.

    Always consumes exactly two uniforms so outcome streams stay aligned.
    """
    u_customer, u_success = rng.random(), rng.random()
    if u_customer < profile.customer_failure_rate:
        status = Status.CUSTOMER_FAILURE
    elif u_success < effective_probability(profile, request, ts):
        status = Status.SUCCESS
    else:
        status = Status.GATEWAY_FAILURE
    return Outcome(request.payment_id, profile.terminal_id, status, int(ts))


# ---------------------------------------------------------------------------
# running traffic through a router


@dataclass
class ArmStats:
    payments: int = 0
    attempts: int = 0
    successes: int = 0
    retries: int = 0
    customer_failures: int = 0
    unrouted: int = 0
    payment_successes: int = 0
    degraded: int = 0
    first_attempt_share: dict = field(default_factory=dict)
    timeline: dict = field(default_factory=dict)  # bucket -> [successes, attempts]

    @property
    def sr(self) -> float:
        """Attempt-level success rate: successful attempts over all attempts."""
        return self.successes / self.attempts if self.attempts else float("nan")

    @property
    def payment_sr(self) -> float:
        return self.payment_successes / self.payments if self.payments else float("nan")

    def timeline_sr(self) -> list[tuple[int, float]]:
        return [(b, s / n) for b, (s, n) in sorted(self.timeline.items()) if n]

    def summary(self) -> dict:
        return {
            "payments": self.payments,
            "attempts": self.attempts,
            "successes": self.successes,
            "sr": self.sr,
            "retries": self.retries,
            "customer_failures": self.customer_failures,
            "unrouted": self.unrouted,
            "degraded": self.degraded,
            "payment_successes": self.payment_successes,
            "payment_sr": self.payment_sr,
            "first_attempt_share": {k: v / self.payments for k, v
                                    in sorted(self.first_attempt_share.items())} if self.payments else {},
        }


def process_payment(router: Router, request: PaymentRequest, profiles: Mapping,
                    rng: np.random.Generator, stats: ArmStats, bucket: int,
                    log: list | None = None) -> None:
    """Route one payment, walk retries down the decision, record every attempt."""
    ts = request.timestamp
    stats.payments += 1
    try:
        decision = router.route(request, ts)
    except NoEligibleTerminalsError:
        stats.unrouted += 1
        if log is not None:
            log.append(LogRecord(request, None, None, NO_ROUTE, ts))
        return
    stats.degraded += decision.degraded
    attempt = 0
    while (terminal := router.next_terminal(decision)) is not None:
        profile = profiles[terminal.terminal_id]
        outcome = simulate_attempt(profile, request, ts, rng)
        router.record_outcome(request, terminal, outcome, ts)
        if attempt == 0:
            share = stats.first_attempt_share
            share[terminal.terminal_id] = share.get(terminal.terminal_id, 0) + 1
        else:
            stats.retries += 1
        ok = outcome.status is Status.SUCCESS
        stats.attempts += 1
        stats.successes += ok
        stats.customer_failures += outcome.status is Status.CUSTOMER_FAILURE
        cell = stats.timeline.setdefault(bucket, [0, 0])
        cell[0] += ok
        cell[1] += 1
        if log is not None:
            log.append(LogRecord(request, terminal.terminal_id, terminal.gateway_id,
                                 outcome.status.value, ts, attempt,
                                 profile.outage_at(ts) is not None))
        if ok:
            stats.payment_successes += 1
        if decision.resolved:
            break
        attempt += 1


@dataclass
class ScenarioResult:
    log: list
    stats: ArmStats


def exploration_router(cfg: ScenarioConfig, rng: np.random.Generator,
                       schema: Schema | None = None, alpha: float = DEFAULT_ALPHA,
                       max_retries: int = 2) -> RandomRouter:
    store = FeatureStore(schema or default_schema(), alpha)
    return RandomRouter(store, rng, None, cfg.rule_set(), cfg.terminals, max_retries)


def run_scenario(cfg: ScenarioConfig, router: Router | None = None,
                 bucket_size: int = DEFAULT_BUCKET) -> ScenarioResult:
    """Push ``cfg.n_payments`` payments through ``router``.

    Without a router the payments are routed uniformly at random (no downtime
    model), which is how unbiased training logs are produced.
    """
    rng = np.random.default_rng(cfg.seed)
    if router is None:
        router = exploration_router(cfg, rng)
    elif isinstance(router, RandomRouter):
        router.rng = rng
    router.store.register_terminals(cfg.terminals)
    if not router.terminals:
        router.terminals = list(cfg.terminals)
    stream = PaymentStream(cfg, rng)
    log, stats = [], ArmStats()
    for i in range(cfg.n_payments):
        request = stream.next()
        process_payment(router, request, cfg.profiles, rng, stats, i // bucket_size, log)
    return ScenarioResult(log, stats)


# ---------------------------------------------------------------------------
# A/B


def arm_of(payment_id: str, seed: int) -> str:
    """Deterministic arm assignment from the parity of a seeded hash."""
    digest = hashlib.blake2b(f"{seed}:{payment_id}".encode(), digest_size=8).digest()
    return ARMS[digest[-1] & 1]


def store_schema_for(forest: TrainedForest, downtime: DowntimeModel | None) -> Schema:
    """Forest templates followed by any downtime templates the forest lacks."""
    schema = forest_schema(forest)
    if downtime is None:
        return schema
    extra = [t for t in downtime.schema if t.name not in schema.names]
    return Schema([*schema.templates, *extra])


@dataclass
class ABReport:
    seed: int
    n_payments: int
    bucket_size: int
    arms: dict
    logs: dict = field(default_factory=dict, repr=False)

    @property
    def gap(self) -> float:
        """Smart-arm SR minus random-arm SR, as a fraction."""
        return self.arms["smart"].sr - self.arms["random"].sr

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "n_payments": self.n_payments,
            "bucket_size": self.bucket_size,
            "arms": {a: self.arms[a].summary() for a in ARMS},
            "sr_gap": self.gap,
        }

    def timeline_rows(self) -> list[tuple[int, str, float]]:
        rows = []
        buckets = sorted(set().union(*(self.arms[a].timeline for a in ARMS)))
        for b in buckets:
            for a in ARMS:
                s, n = self.arms[a].timeline.get(b, (0, 0))
                if n:
                    rows.append((b, a, s / n))
        return rows

    def write(self, summary_path, timeline_path) -> None:
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(timeline_path, "w", encoding="utf-8") as fh:
            fh.write("bucket_index,arm,sr\n")
            for b, a, sr in self.timeline_rows():
                fh.write(f"{b},{a},{sr!r}\n")


def run_ab(cfg: ScenarioConfig, forest: TrainedForest, downtime: DowntimeModel | None,
           n_payments: int | None = None, seed: int | None = None,
           alpha: float = DEFAULT_ALPHA, max_retries: int = 2,
           bucket_size: int = DEFAULT_BUCKET, keep_logs: bool = False) -> ABReport:
    """Split one payment stream between random and smart routing.

    Each arm owns an isolated feature store; both share the static rules and
    the downtime model, so the only difference is how terminals are ranked.
    """
    if forest is None or not isinstance(forest, TrainedForest):
        raise ConfigError("run_ab needs a trained forest")
    if downtime is not None and not isinstance(downtime, DowntimeModel):
        raise ConfigError("downtime must be a trained DowntimeModel")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if n_payments is not None:
        cfg = replace(cfg, n_payments=n_payments)
    rng = np.random.default_rng(cfg.seed)
    schema = store_schema_for(forest, downtime)
    rules = cfg.rule_set()
    routers = {
        "random": RandomRouter(FeatureStore(schema, alpha), rng, downtime, rules,
                               cfg.terminals, max_retries),
        "smart": Router(FeatureStore(schema, alpha), forest, downtime, rules,
                        cfg.terminals, max_retries),
    }
    stats = {a: ArmStats() for a in ARMS}
    logs = {a: [] for a in ARMS}
    stream = PaymentStream(cfg, rng)
    for i in range(cfg.n_payments):
        request = stream.next()
        arm = arm_of(request.payment_id, cfg.seed)
        process_payment(routers[arm], request, cfg.profiles, rng, stats[arm],
                        i // bucket_size, logs[arm] if keep_logs else None)
    return ABReport(cfg.seed, cfg.n_payments, bucket_size, stats, logs if keep_logs else {})


# ---------------------------------------------------------------------------
# reference scenarios


def _terminal(tid: str, gid: str) -> Terminal:
    return Terminal(tid, gid, frozenset(Method))


REFERENCE_LAYOUT = (
    # terminal, gateway, base success probability
    ("t1", "g1", 0.6),
    ("t2", "g1", 0.9),
    ("t3", "g2", 0.4),
    ("t4", "g2", 0.8),
)


def reference_scenario(success_probs: Sequence[float] | None = None,
                       outages: Sequence[tuple[str, int, int]] = (("g1", 10_000, 13_000),),
                       n_payments: int = 50_000, seed: int = 7,
                       customer_failure_rate: float = 0.05,
                       arrival_rate: float = 10.0) -> ScenarioConfig:
    """Four terminals on two gateways with payment-indexed gateway outages.

    ``outages`` holds ``(gateway_id, start_payment, end_payment)``; arrivals
    are evenly spaced so payment indices map to fixed timestamps.
    """
    layout = [(t, g, p) for t, g, p in REFERENCE_LAYOUT]
    if success_probs is not None:
        layout = [(t, g, p) for (t, g, _), p in zip(layout, success_probs)]
    base = ScenarioConfig(
        terminals=tuple(_terminal(t, g) for t, g, _ in layout),
        profiles={t: TerminalProfile(t) for t, _, _ in layout},
        merchants={"m1": 0.5, "m2": 0.3, "m3": 0.2},
        methods={"card": 0.5, "upi": 0.3, "netbanking": 0.2},
        issuer_banks={"bankA": 0.4, "bankB": 0.35, "bankC": 0.25},
        networks={"visa": 0.5, "mastercard": 0.3, "rupay": 0.2},
        arrival_rate=arrival_rate,
        arrival="fixed",
        n_payments=n_payments,
        seed=seed,
    )
    windows = {t: [] for t, _, _ in layout}
    for gid, start, end in outages:
        for t, g, _ in layout:
            if g == gid:
                windows[t].append(DowntimeWindow(base.ts_of_payment(start), base.ts_of_payment(end)))
    profiles = {t: TerminalProfile(t, p, {}, customer_failure_rate, tuple(windows[t]))
                for t, _, p in layout}
    return replace(base, profiles=profiles)


def heterogeneous_scenario(n_payments: int = 50_000, seed: int = 7) -> ScenarioConfig:
    """Terminals at 0.9/0.8/0.6/0.4 with a g1 outage starting at payment 10k."""
    return reference_scenario(n_payments=n_payments, seed=seed)


def homogeneous_scenario(n_payments: int = 50_000, seed: int = 7) -> ScenarioConfig:
    """Control: four identical terminals and no outage."""
    return reference_scenario((0.75, 0.75, 0.75, 0.75), outages=(), n_payments=n_payments,
                              seed=seed)


def exploration_scenario(n_payments: int = 30_000, seed: int = 1) -> ScenarioConfig:
    """Training traffic over the reference terminals with outages on both gateways."""
    return reference_scenario(
        outages=(("g1", 4_000, 6_000), ("g2", 12_000, 14_000), ("g1", 20_000, 22_000),
                 ("g2", 26_000, 28_000)),
        n_payments=n_payments, seed=seed,
    )


# ---------------------------------------------------------------------------
# bootstrap training


def train_models(log: Sequence[LogRecord], schema: Schema | None = None,
                 forest_params: ForestParams = ForestParams(),
                 downtime_params: LogisticParams = LogisticParams(class_weight="balanced"),
                 downtime_threshold: float = DEFAULT_DOWNTIME_THRESHOLD,
                 alpha: float = DEFAULT_ALPHA) -> tuple[TrainedForest, DowntimeModel]:
    """Fit the ranking forest and the downtime model on an exploration log."""
    schema = schema or default_schema()
    forest = train_forest(build_training_set(log, schema, alpha), forest_params)
    gw_schema = schema.gateway_only()
    downtime = train_downtime_model(build_downtime_set(log, gw_schema, alpha), gw_schema,
                                    downtime_params, downtime_threshold)
    return forest, downtime


def bootstrap(cfg: ScenarioConfig | None = None, **kwargs) -> tuple[TrainedForest, DowntimeModel]:
    """Run random exploration traffic and train both models on its log."""
    result = run_scenario(cfg or exploration_scenario())
    return train_models(result.log, **kwargs)
