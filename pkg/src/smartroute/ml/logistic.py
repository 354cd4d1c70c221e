"""L2-regularized logistic regression fitted by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, LogisticDivergenceError, SchemaMismatchError
from ..feature_store import FeatureVector
from .dataset import Dataset


@dataclass(frozen=True)
class LogisticParams:
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 1e-3
    # "balanced" reweights classes to equal total weight
    class_weight: str | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.class_weight not in (None, "balanced"):
            raise ConfigError(f"class_weight must be None or 'balanced', got {self.class_weight!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainedLogistic:
    weights: np.ndarray
    bias: float
    means: np.ndarray
    scales: np.ndarray
    schema_id: str
    feature_names: tuple
    params: LogisticParams

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.weights):
            raise SchemaMismatchError(f"expected {len(self.weights)} features, got {X.shape[1]}")
        return ((X - self.means) / self.scales) @ self.weights + self.bias

    def probabilities(self, X) -> np.ndarray:
        return expit(self.decision(X))


def _sample_weights(y: np.ndarray, class_weight: str | None) -> np.ndarray:
    w = np.ones(len(y))
    if class_weight == "balanced":
        for cls in (0, 1):
            mask = y == cls
            if mask.any():
                w[mask] = len(y) / (2.0 * mask.sum())
    return w


def train_logistic(ds: Dataset, params: LogisticParams = LogisticParams()) -> TrainedLogistic:
    """Fit weights on standardized features by gradient descent on mean log loss.

    Constant columns get scale 1 so they standardize to zero and never move.
    """
    if len(ds) == 0:
        raise ValueError("cannot train logistic regression on an empty dataset")
    X, y = ds.X, ds.y.astype(float)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales == 0] = 1.0
    Z = (X - means) / scales
    sw = _sample_weights(ds.y, params.class_weight)
    sw = sw / sw.sum()
    w = np.zeros(X.shape[1])
    b = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(params.epochs):
            z = Z @ w + b
            loss = float(sw @ (np.logaddexp(0.0, z) - y * z)) + 0.5 * params.l2 * float(w @ w)
            if not np.isfinite(loss):
                raise LogisticDivergenceError(
                    f"loss became non-finite at epoch {epoch}; "
                    f"learning_rate={params.learning_rate} is too large"
                )
            r = sw * (expit(z) - y)
            w = w - params.learning_rate * (Z.T @ r + params.l2 * w)
            b = b - params.learning_rate * float(r.sum())
    if not (np.isfinite(w).all() and np.isfinite(b)):
        raise LogisticDivergenceError(
            f"weights became non-finite; learning_rate={params.learning_rate} is too large"
        )
    return TrainedLogistic(w, b, means, scales, ds.schema_id, ds.feature_names, params)


def logistic_probability(m: TrainedLogistic, v) -> float:
    if isinstance(v, FeatureVector):
        if v.schema_id != m.schema_id:
            raise SchemaMismatchError(
                f"vector schema {v.schema_id} does not match model schema {m.schema_id}"
            )
        v = v.values
    return float(m.probabilities(np.asarray(v, dtype=float)[None, :])[0])
