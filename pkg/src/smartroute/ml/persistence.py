"""JSON model files.

Every file is one JSON object with a fixed header::

    {"format": "smartroute-model", "version": 1, "kind": "forest" | "logistic",
     "schema_id": ..., "feature_names": [...], "params": {...}, "payload": {...}}

Floats are written with Python's shortest round-trip repr, so loading a saved
model reproduces every threshold, leaf value and weight exactly.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ModelFormatError
from .forest import TrainedForest
from .logistic import LogisticParams, TrainedLogistic
from .tree import ForestParams, TrainedTree

FORMAT = "smartroute-model"
VERSION = 1


def _header(kind: str, model, params: dict) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "schema_id": model.schema_id,
        "feature_names": list(model.feature_names),
        "params": params,
    }


def logistic_payload(m: TrainedLogistic) -> dict:
    return {
        "weights": m.weights.tolist(),
        "bias": float(m.bias),
        "means": m.means.tolist(),
        "scales": m.scales.tolist(),
    }


def logistic_from(doc: dict) -> TrainedLogistic:
    p = doc["payload"]
    return TrainedLogistic(
        np.asarray(p["weights"], dtype=float),
        float(p["bias"]),
        np.asarray(p["means"], dtype=float),
        np.asarray(p["scales"], dtype=float),
        doc["schema_id"],
        tuple(doc["feature_names"]),
        LogisticParams(**doc["params"]),
    )


def model_to_dict(model) -> dict:
    if isinstance(model, TrainedForest):
        doc = _header("forest", model, model.params.to_dict())
        doc["payload"] = {"trees": [t.to_dict() for t in model.trees]}
    elif isinstance(model, TrainedLogistic):
        doc = _header("logistic", model, model.params.to_dict())
        doc["payload"] = logistic_payload(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict, kind: str | None = None):
    if doc.get("format") != FORMAT:
        raise ModelFormatError(f"not a model file (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise ModelFormatError(f"expected a {kind} model, found {doc.get('kind')!r}")
    try:
        if doc["kind"] == "forest":
            trees = tuple(TrainedTree.from_dict(t) for t in doc["payload"]["trees"])
            return TrainedForest(trees, doc["schema_id"], tuple(doc["feature_names"]),
                                 ForestParams(**doc["params"]))
        if doc["kind"] == "logistic":
            return logistic_from(doc)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model payload: {exc}") from exc
    raise ModelFormatError(f"unknown model kind {doc.get('kind')!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path, kind: str | None = None):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not JSON ({exc})") from exc
    return model_from_dict(doc, kind)
