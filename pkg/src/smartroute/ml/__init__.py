"""From-scratch models, metrics and feature selection."""

from .dataset import Dataset, build_downtime_set, build_training_set
from .forest import TrainedForest, forest_probability, impurity_importance, train_forest
from .logistic import LogisticParams, TrainedLogistic, logistic_probability, train_logistic
from .metrics import confusion_counts, precision, roc_auc
from .persistence import load_model, save_model
from .selection import RFEResult, VIFResult, rfe, vif, vif_filter
from .tree import ForestParams, TrainedTree, train_tree
from .tuning import GridResult, GridSpec, grid_search

__all__ = [
    "Dataset", "build_training_set", "build_downtime_set",
    "TrainedForest", "forest_probability", "impurity_importance", "train_forest",
    "LogisticParams", "TrainedLogistic", "logistic_probability", "train_logistic",
    "confusion_counts", "precision", "roc_auc",
    "load_model", "save_model",
    "RFEResult", "VIFResult", "rfe", "vif", "vif_filter",
    "ForestParams", "TrainedTree", "train_tree",
    "GridResult", "GridSpec", "grid_search",
]
