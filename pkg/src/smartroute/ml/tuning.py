"""Grid-search cross-validation of forest hyperparameters, scored by precision."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, UndefinedMetricError
from .dataset import Dataset
from .forest import train_forest
from .metrics import confusion_counts, precision
from .tree import ForestParams


@dataclass(frozen=True)
class GridSpec:
    grid: dict
    folds: int = 3
    seed: int = 0
    base: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ConfigError("grid must name at least one value per parameter")

    def cells(self) -> list[ForestParams]:
        names = list(self.grid)
        return [replace(self.base, **dict(zip(names, combo)))
                for combo in itertools.product(*(self.grid[n] for n in names))]


@dataclass(frozen=True)
class GridResult:
    best: ForestParams
    scores: tuple   # (params, mean validation precision) per cell, grid order


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def grid_search(ds: Dataset, spec: GridSpec) -> GridResult:
    """Pick the cell with the best mean validation precision.

    Ties go to fewer trees, then shallower trees, then grid order. A fold
    with no positive predictions scores 0 for its cell.
    """
    if len(ds) < spec.folds:
        raise ConfigError(f"{len(ds)} rows cannot fill {spec.folds} folds")
    parts = fold_indices(len(ds), spec.folds, spec.seed)
    scores = []
    for params in spec.cells():
        fold_scores = []
        for k, val in enumerate(parts):
            train = np.concatenate([p for i, p in enumerate(parts) if i != k])
            forest = train_forest(ds.take(train), params)
            held = ds.take(val)
            counts = confusion_counts(forest.probabilities(held.X), held.y)
            try:
                fold_scores.append(precision(counts))
            except UndefinedMetricError:
                warnings.warn(f"undefined precision on fold {k} for {params}; scoring it 0",
                              RuntimeWarning, stacklevel=2)
                fold_scores.append(0.0)
        scores.append((params, float(np.mean(fold_scores))))
    order = sorted(range(len(scores)),
                   key=lambda i: (-scores[i][1], scores[i][0].n_trees, scores[i][0].max_depth, i))
    return GridResult(scores[order[0]][0], tuple(scores))
