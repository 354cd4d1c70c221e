"""Second routing stage: rank terminals by forest vote share, retry down the list,
and feed outcomes back into the feature store."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Outcome, PaymentRequest, Status, Terminal
from .errors import ConfigError, NoEligibleTerminalsError, RoutingError, SchemaMismatchError
from .feature_store import FeatureStore, Schema
from .ml.forest import TrainedForest
from .static_router import DowntimeModel, RuleSet, static_filter

DEFAULT_MAX_RETRIES = 2


@dataclass(frozen=True)
class ScoredTerminal:
    terminal: Terminal
    probability: float


@dataclass
class RouteDecision:
    request_id: str
    ranked: tuple
    created_at: float
    max_attempts: int
    degraded: bool = False
    cursor: int = 0
    attempted: list = field(default_factory=list)
    resolved: bool = False
    final_status: str | None = None

    @property
    def terminals(self) -> list[Terminal]:
        return [s.terminal for s in self.ranked]

    @property
    def exhausted(self) -> bool:
        return len(self.attempted) >= min(len(self.ranked), self.max_attempts)

    def pairs(self) -> list[tuple[str, float]]:
        return [(s.terminal.terminal_id, s.probability) for s in self.ranked]


def forest_schema(forest: TrainedForest) -> Schema:
    """Rebuild the template schema a forest was trained on from its feature names."""
    schema = Schema.from_manifest({"templates": list(forest.feature_names)})
    if schema.schema_id != forest.schema_id:
        raise SchemaMismatchError("forest feature names do not hash to its schema_id")
    return schema


def rank(scored: Sequence[ScoredTerminal]) -> tuple:
    """Probability descending, terminal id ascending on ties."""
    return tuple(sorted(scored, key=lambda s: (-s.probability, s.terminal.terminal_id)))


class Router:
    """Routing context plus the table of open decisions.

    ``score_calls`` counts forest invocations so callers can check that a
    retry never triggers a re-score.
    """

    def __init__(self, store: FeatureStore, forest: TrainedForest | None,
                 downtime: DowntimeModel | None = None, rules: RuleSet | None = None,
                 terminals: Sequence[Terminal] = (), max_retries: int = DEFAULT_MAX_RETRIES):
        if max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {max_retries}")
        self.store = store
        self.forest = forest
        self.downtime = downtime
        self.rules = rules or RuleSet()
        self.max_retries = max_retries
        missing = []
        self.schema = None
        if forest is not None:
            self.schema = forest_schema(forest)
            missing += [n for n in self.schema.names if n not in store.schema.names]
        if downtime is not None:
            missing += [n for n in downtime.schema.names if n not in store.schema.names]
        if missing:
            raise SchemaMismatchError(f"store does not maintain templates {missing}")
        self.terminals = list(terminals)
        store.register_terminals(self.terminals)
        self.score_calls = 0
        self._decisions: dict[str, RouteDecision] = {}
        self._lock = threading.Lock()

    @property
    def max_attempts(self) -> int:
        return self.max_retries + 1

    def score_terminals(self, request: PaymentRequest, terminals: Sequence[Terminal],
                        ts: float, degraded: bool = False) -> RouteDecision:
        """Score every candidate once and sort; reads the store, never writes it."""
        if not terminals:
            raise NoEligibleTerminalsError(f"no terminals to score for {request.payment_id}")
        if self.forest is None:
            raise ConfigError("this router has no trained forest")
        X = np.array([self.store.feature_vector(request, t, ts, self.schema).values
                      for t in terminals])
        self.score_calls += 1
        probs = self.forest.probabilities(X)
        ranked = rank([ScoredTerminal(t, float(p)) for t, p in zip(terminals, probs)])
        return RouteDecision(request.payment_id, ranked, ts, self.max_attempts, degraded)

    def route(self, request: PaymentRequest, ts: float | None = None,
              terminals: Sequence[Terminal] | None = None) -> RouteDecision:
        ts = request.timestamp if ts is None else ts
        candidates = self.terminals if terminals is None else terminals
        static = static_filter(request, candidates, self.rules, self.downtime, self.store, ts)
        decision = self.score_terminals(request, static.terminals, ts, static.degraded)
        with self._lock:
            self._decisions[request.payment_id] = decision
        return decision

    def next_terminal(self, decision: RouteDecision) -> Terminal | None:
        """Next terminal in the stored order, or ``None`` once exhausted."""
        if decision.resolved or decision.cursor >= len(decision.ranked) \
                or decision.cursor >= decision.max_attempts:
            return None
        t = decision.ranked[decision.cursor].terminal
        decision.cursor += 1
        return t

    def decision(self, payment_id: str) -> RouteDecision:
        try:
            return self._decisions[payment_id]
        except KeyError:
            raise RoutingError(f"no open decision for payment {payment_id!r}") from None

    def record_outcome(self, request: PaymentRequest, terminal: Terminal, outcome: Outcome,
                       ts: float | None = None) -> RouteDecision:
        """Feed an attempt's outcome back and advance the decision's lifecycle.

        Success, customer failure (never retried) and exhaustion resolve the
        decision; a gateway failure with attempts left keeps it open.
        """
        with self._lock:
            decision = self.decision(request.payment_id)
            if terminal.terminal_id not in {s.terminal.terminal_id for s in decision.ranked}:
                raise RoutingError(
                    f"terminal {terminal.terminal_id} is not in the decision for "
                    f"{request.payment_id}"
                )
            if terminal.terminal_id in decision.attempted:
                raise RoutingError(
                    f"terminal {terminal.terminal_id} already attempted for {request.payment_id}"
                )
            decision.attempted.append(terminal.terminal_id)
            self.store.apply_feedback(request, terminal, outcome, ts)
            status = Status(outcome.status)
            if status is not Status.GATEWAY_FAILURE or decision.exhausted:
                decision.resolved = True
                decision.final_status = status.value
                del self._decisions[request.payment_id]
            return decision

    def open_decisions(self) -> int:
        return len(self._decisions)

    def sweep(self, now: float, max_age: float) -> int:
        """Drop decisions older than ``max_age`` seconds; returns how many."""
        with self._lock:
            stale = [k for k, d in self._decisions.items() if now - d.created_at > max_age]
            for k in stale:
                del self._decisions[k]
        return len(stale)


class RandomRouter(Router):
    """Uniformly random ordering of the statically filtered terminals.

    Shares the retry and feedback machinery with ``Router``; used for the
    control arm of A/B runs and for unbiased exploration logs.
    """

    def __init__(self, store: FeatureStore, rng: np.random.Generator,
                 downtime: DowntimeModel | None = None, rules: RuleSet | None = None,
                 terminals: Sequence[Terminal] = (), max_retries: int = DEFAULT_MAX_RETRIES):
        super().__init__(store, None, downtime, rules, terminals, max_retries)
        self.rng = rng

    def score_terminals(self, request, terminals, ts, degraded=False):
        if not terminals:
            raise NoEligibleTerminalsError(f"no terminals to route {request.payment_id}")
        order = self.rng.permutation(len(terminals))
        p = 1.0 / len(terminals)
        ranked = tuple(ScoredTerminal(terminals[i], p) for i in order)
        return RouteDecision(request.payment_id, ranked, ts, self.max_attempts, degraded)
