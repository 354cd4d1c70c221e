"""CART classification trees with Gini impurity, stored as flat arrays."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from .dataset import Dataset

LEAF = -1
# gains at or below this are float noise, not real splits
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    min_samples_leaf: int = 20
    feature_subsample_count: int | None = None  # None -> ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_samples_leaf"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.feature_subsample_count is not None and self.feature_subsample_count < 1:
            raise ConfigError("feature_subsample_count must be >= 1")

    def subsample_for(self, n_features: int) -> int:
        if self.feature_subsample_count is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return min(self.feature_subsample_count, n_features)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainedTree:
    """Node arrays; node 0 is the root, ``feature == -1`` marks a leaf.

    A sample goes left when ``x[feature] <= threshold``. ``value`` is the
    positive-label fraction of the training samples that reached the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.atleast_2d(X)
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[nodes]
            inner = feat != LEAF
            if not inner.any():
                return nodes
            f = np.where(inner, feat, 0)
            go_left = X[rows, f] <= self.threshold[nodes]
            nodes = np.where(inner, np.where(go_left, self.left[nodes], self.right[nodes]), nodes)

    def leaf_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["n_samples"], dtype=np.int64),
            np.asarray(d["impurity"], dtype=float),
        )


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for tree ``index`` of a forest seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def gini(pos: float, n: float) -> float:
    p = pos / n
    return 2.0 * p * (1.0 - p)


def best_split(x: np.ndarray, y: np.ndarray, min_samples_leaf: int):
    """Best Gini split of one feature column.

    Returns ``(gain, threshold)`` or ``None`` when no admissible split exists.
    Candidate thresholds are midpoints between consecutive distinct values.
    """
    n = len(y)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cum = np.cumsum(y[order], dtype=float)[:-1]
    total = float(y.sum())
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    ok = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    if not ok.any():
        return None
    p_left = cum / n_left
    p_right = (total - cum) / n_right
    child = (n_left * 2 * p_left * (1 - p_left) + n_right * 2 * p_right * (1 - p_right)) / n
    gain = gini(total, n) - child
    gain = np.where(ok, gain, -np.inf)
    i = int(np.argmax(gain))
    if gain[i] <= MIN_GAIN:
        return None
    thr = (xs[i] + xs[i + 1]) / 2.0
    if thr >= xs[i + 1]:
        thr = xs[i]
    return float(gain[i]), float(thr)


def train_tree(ds: Dataset, params: ForestParams = ForestParams(),
               rng: np.random.Generator | None = None,
               sample: np.ndarray | None = None) -> TrainedTree:
    """Greedy depth-first CART induction.

    ``sample`` optionally lists the row indices to grow from (repeats allowed,
    which is how bootstrap resamples are passed in). Only the per-split
    feature subsample consumes ``rng``.
    """
    if len(ds) == 0:
        raise ValueError("cannot train a tree on an empty dataset")
    if rng is None:
        rng = tree_rng(params.seed, 0)
    X, y = ds.X, ds.y.astype(float)
    d = ds.n_features
    k = params.subsample_for(d)
    idx0 = np.arange(len(ds)) if sample is None else np.asarray(sample)

    feature, threshold, left, right, value, n_samples, impurity = [], [], [], [], [], [], []

    def new_node(idx) -> int:
        pos = float(y[idx].sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(pos / len(idx))
        n_samples.append(len(idx))
        impurity.append(gini(pos, len(idx)))
        return len(feature) - 1

    stack = [(new_node(idx0), idx0, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= params.max_depth or impurity[node] <= 0.0 \
                or len(idx) < 2 * params.min_samples_leaf:
            continue
        candidates = rng.choice(d, size=k, replace=False) if k < d else range(d)
        best = None
        yi = y[idx]
        for f in candidates:
            found = best_split(X[idx, f], yi, params.min_samples_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], found[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return TrainedTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        np.asarray(n_samples, dtype=np.int64),
        np.asarray(impurity, dtype=float),
    )
