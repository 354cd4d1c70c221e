"""Two-stage feature reduction: recursive elimination, then a VIF sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .dataset import Dataset
from .forest import impurity_importance, train_forest
from .tree import ForestParams

DEFAULT_VIF_THRESHOLD = 5.0
# relative slack on the strict VIF comparison; 1/(1-0.8) is 5.000000000000001 in floats
VIF_RTOL = 1e-9
# 1 - R^2 below this counts as perfect collinearity
COLLINEAR_EPS = 1e-10


@dataclass(frozen=True)
class RFEResult:
    selected: tuple      # column indices, ascending
    eliminated: tuple    # column indices in the order they were dropped
    feature_names: tuple


def rfe(ds: Dataset, target_count: int, params: ForestParams = ForestParams(),
        drop_fraction: float = 0.1) -> RFEResult:
    """Refit a forest and drop its least important features until ``target_count`` remain.

    Each round drops ``max(1, ceil(drop_fraction * remaining))`` features,
    never overshooting the target. Importance ties drop the later column.
    """
    d = ds.n_features
    if not 1 <= target_count <= d:
        raise ConfigError(f"target_count must be in [1, {d}], got {target_count}")
    if not 0 <= drop_fraction < 1:
        raise ConfigError(f"drop_fraction must be in [0, 1), got {drop_fraction}")
    remaining = list(range(d))
    eliminated = []
    while len(remaining) > target_count:
        forest = train_forest(ds.select(remaining), params)
        imp = impurity_importance(forest)
        n_drop = min(max(1, math.ceil(drop_fraction * len(remaining))),
                     len(remaining) - target_count)
        # ascending importance; among ties the higher position goes first
        order = sorted(range(len(remaining)), key=lambda j: (imp[j], -j))
        drop = {remaining[j] for j in order[:n_drop]}
        eliminated += [remaining[j] for j in order[:n_drop]]
        remaining = [c for c in remaining if c not in drop]
    names = tuple(ds.feature_names[c] for c in remaining)
    return RFEResult(tuple(remaining), tuple(eliminated), names)


def vif(X: np.ndarray) -> np.ndarray:
    """Variance inflation factor of every column against all the others.

    Each column is regressed (least squares, with intercept) on the rest;
    VIF = 1 / (1 - R^2). Perfectly explained columns get ``inf`` and constant
    columns ``nan``.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    out = np.empty(d)
    for j in range(d):
        target = X[:, j]
        ss_tot = float(((target - target.mean()) ** 2).sum())
        if ss_tot == 0.0:
            out[j] = np.nan
            continue
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        unexplained = float(resid @ resid) / ss_tot
        out[j] = np.inf if unexplained <= COLLINEAR_EPS else 1.0 / unexplained
    return out


@dataclass(frozen=True)
class VIFResult:
    selected: tuple      # column indices, ascending
    dropped: tuple       # (column, vif at removal) in removal order
    vifs: tuple          # final VIF of each selected column
    feature_names: tuple


def vif_filter(ds: Dataset, threshold: float = DEFAULT_VIF_THRESHOLD) -> VIFResult:
    """Drop constant columns, then the max-VIF column while it exceeds ``threshold``."""
    X = ds.X
    keep = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
    dropped = [(j, float("nan")) for j in range(X.shape[1]) if j not in keep]
    vifs = np.ones(len(keep))
    while len(keep) > 1:
        vifs = vif(X[:, keep])
        worst = max(range(len(keep)), key=lambda i: (vifs[i], i))
        if not vifs[worst] > threshold * (1 + VIF_RTOL):
            break
        dropped.append((keep[worst], float(vifs[worst])))
        del keep[worst]
    if len(keep) == 1:
        vifs = np.ones(1)
    names = tuple(ds.feature_names[c] for c in keep)
    return VIFResult(tuple(keep), tuple(dropped), tuple(float(v) for v in vifs), names)
