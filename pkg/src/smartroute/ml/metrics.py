"""Classification metrics: precision for the success class and ROC-AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..core import MetricsCounts
from ..errors import UndefinedMetricError

DEFAULT_THRESHOLD = 0.5


def confusion_counts(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> MetricsCounts:
    """Counts with a sample predicted positive when its score is strictly above ``threshold``."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pred = scores > threshold
    return MetricsCounts(
        tp=int((pred & labels).sum()),
        fp=int((pred & ~labels).sum()),
        tn=int((~pred & ~labels).sum()),
        fn=int((~pred & labels).sum()),
    )


def precision(counts: MetricsCounts) -> float:
    if counts.tp + counts.fp < 1:
        raise UndefinedMetricError("precision is undefined with no positive predictions")
    return counts.tp / (counts.tp + counts.fp)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum identity.

    Equals P(score_pos > score_neg) + 0.5 * P(tie) over all positive/negative
    pairs; tied scores get mid-ranks.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
