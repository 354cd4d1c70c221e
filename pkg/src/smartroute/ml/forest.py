"""Bagged CART ensemble and the vote-count success probability.

A forest's probability for a feature vector is the fraction of its trees
whose leaf has a positive fraction strictly above 0.5, so outputs are always
multiples of ``1 / n_trees``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import SchemaMismatchError
from ..feature_store import FeatureVector
from .dataset import Dataset
from .tree import LEAF, ForestParams, train_tree, tree_rng

VOTE_THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainedForest:
    trees: tuple
    schema_id: str
    feature_names: tuple
    params: ForestParams

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @cached_property
    def _stacked(self):
        width = max(t.n_nodes for t in self.trees)

        def pad(attr, fill, dtype):
            out = np.full((self.n_trees, width), fill, dtype=dtype)
            for i, t in enumerate(self.trees):
                out[i, :t.n_nodes] = getattr(t, attr)
            return out

        return (
            pad("feature", LEAF, np.int64),
            pad("threshold", 0.0, float),
            pad("left", 0, np.int64),
            pad("right", 0, np.int64),
            pad("value", 0.0, float),
        )

    def leaf_values(self, X) -> np.ndarray:
        """``(n_trees, n_rows)`` matrix of leaf positive fractions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise SchemaMismatchError(f"expected {self.n_features} features, got {X.shape[1]}")
        feature, threshold, left, right, value = self._stacked
        n = X.shape[0]
        tree_idx = np.repeat(np.arange(self.n_trees), n)
        row_idx = np.tile(np.arange(n), self.n_trees)
        nodes = np.zeros(self.n_trees * n, dtype=np.int64)
        while True:
            feat = feature[tree_idx, nodes]
            inner = feat != LEAF
            if not inner.any():
                break
            go_left = X[row_idx, np.where(inner, feat, 0)] <= threshold[tree_idx, nodes]
            nxt = np.where(go_left, left[tree_idx, nodes], right[tree_idx, nodes])
            nodes = np.where(inner, nxt, nodes)
        return value[tree_idx, nodes].reshape(self.n_trees, n)

    def vote_counts(self, X) -> np.ndarray:
        return (self.leaf_values(X) > VOTE_THRESHOLD).sum(axis=0)

    def probabilities(self, X) -> np.ndarray:
        return self.vote_counts(X) / self.n_trees


def train_forest(ds: Dataset, params: ForestParams = ForestParams()) -> TrainedForest:
    """Fit ``params.n_trees`` trees, each on its own bootstrap resample.

    Every tree draws from its own seeded generator, so the forest is a pure
    function of (dataset, params).
    """
    if len(ds) == 0:
        raise ValueError("cannot train a forest on an empty dataset")
    n = len(ds)
    trees = []
    for i in range(params.n_trees):
        rng = tree_rng(params.seed, i)
        sample = rng.integers(0, n, size=n) if params.bootstrap else None
        trees.append(train_tree(ds, params, rng, sample))
    return TrainedForest(tuple(trees), ds.schema_id, ds.feature_names, params)


def forest_probability(forest: TrainedForest, v) -> float:
    """Share of trees voting success (leaf fraction > 0.5) for one vector."""
    if isinstance(v, FeatureVector):
        if v.schema_id != forest.schema_id:
            raise SchemaMismatchError(
                f"vector schema {v.schema_id} does not match forest schema {forest.schema_id}"
            )
        v = v.values
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != forest.n_features:
        raise SchemaMismatchError(f"expected {forest.n_features} features, got shape {v.shape}")
    return int(forest.vote_counts(v[None, :])[0]) / forest.n_trees


def impurity_importance(forest: TrainedForest) -> np.ndarray:
    """Mean decrease in Gini impurity per feature, normalized to sum to 1.

    Each split contributes ``n_node * gini_node - n_left * gini_left -
    n_right * gini_right`` scaled by the tree's root sample count.
    """
    total = np.zeros(forest.n_features)
    for t in forest.trees:
        inner = np.flatnonzero(t.feature != LEAF)
        if inner.size == 0:
            continue
        l, r = t.left[inner], t.right[inner]
        dec = (t.n_samples[inner] * t.impurity[inner]
               - t.n_samples[l] * t.impurity[l]
               - t.n_samples[r] * t.impurity[r])
        np.add.at(total, t.feature[inner], dec / t.n_samples[0])
    total /= forest.n_trees
    s = total.sum()
    return total / s if s > 0 else total
