"""Payment routing: online success-rate features, a two-stage router and a
seeded traffic simulator for measuring it."""

from .core import Method, Outcome, PaymentRequest, Status, Terminal
from .dynamic_router import RandomRouter, RouteDecision, Router
from .feature_store import FeatureStore, Schema, default_schema
from .static_router import DowntimeModel, RuleSet, static_filter

__version__ = "0.1.0"

__all__ = [
    "Method", "Outcome", "PaymentRequest", "Status", "Terminal",
    "RandomRouter", "RouteDecision", "Router",
    "FeatureStore", "Schema", "default_schema",
    "DowntimeModel", "RuleSet", "static_filter",
]
