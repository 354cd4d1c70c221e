"""Labelled feature matrices and their construction by log replay."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..core import LogRecord, Status, time_ordered
from ..feature_store import DEFAULT_ALPHA, FeatureStore, FeatureVector, Schema, schema_id_for
from ..errors import SchemaMismatchError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    schema_id: str

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, len(self.feature_names))
        y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatchError(
                f"{X.shape[1]} columns but {len(self.feature_names)} feature names"
            )
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @classmethod
    def from_arrays(cls, X, y, feature_names: Sequence[str] | None = None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if feature_names is None:
            feature_names = [f"x{i}" for i in range(X.shape[1])]
        return cls(X, y, tuple(feature_names), schema_id_for(feature_names))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[FeatureVector, int]], schema: Schema) -> "Dataset":
        rows = list(rows)
        for vec, _ in rows:
            if vec.schema_id != schema.schema_id:
                raise SchemaMismatchError(f"row schema {vec.schema_id} != {schema.schema_id}")
        X = np.array([v.values for v, _ in rows], dtype=float).reshape(len(rows), len(schema))
        y = np.array([lab for _, lab in rows], dtype=np.int8)
        return cls(X, y, schema.names, schema.schema_id)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def take(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.feature_names, self.schema_id)

    def select(self, columns: Sequence[int]) -> "Dataset":
        columns = list(columns)
        names = tuple(self.feature_names[c] for c in columns)
        return Dataset(self.X[:, columns], self.y, names, schema_id_for(names))

    def split(self, test_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded random train/test split."""
        perm = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.take(np.sort(perm[n_test:])), self.take(np.sort(perm[:n_test]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*self.feature_names, "label"])
            for row, lab in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = [list(map(float, line)) for line in r if line]
        names = header[:-1]
        arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return cls(arr[:, :-1], arr[:, -1].astype(np.int8), tuple(names), schema_id_for(names))


def build_training_set(records: Iterable[LogRecord], schema: Schema,
                       alpha: float = DEFAULT_ALPHA, strict: bool = False) -> Dataset:
    """Replay a transaction log into (features-before-outcome, label) rows.

    Each routed attempt contributes the terminal's feature vector as it stood
    just before its own feedback, so no row can see its own or any later
    outcome. Customer failures produce neither a row nor a store update.
    """
    store = FeatureStore(schema, alpha)
    X, y = [], []
    for rec in time_ordered(records, strict=strict):
        if not rec.routed or rec.status == Status.CUSTOMER_FAILURE.value:
            continue
        terminal = rec.terminal()
        store.register_terminals([terminal])
        X.append(store.feature_vector(rec.request, terminal, rec.ts).values)
        y.append(int(rec.status == Status.SUCCESS.value))
        store.apply_feedback(rec.request, terminal, rec.outcome(), rec.ts)
    X = np.array(X, dtype=float).reshape(len(y), len(schema))
    return Dataset(X, np.array(y, dtype=np.int8), schema.names, schema.schema_id)


def build_downtime_set(records: Iterable[LogRecord], schema: Schema,
                       alpha: float = DEFAULT_ALPHA, strict: bool = False) -> Dataset:
    """Gateway-level rows labelled 1 when the attempt fell inside an outage.

    ``schema`` must only hold gateway-scoped and system templates. Records
    need the ``outage`` flag the simulator writes.
    """
    store = FeatureStore(schema, alpha)
    X, y = [], []
    for rec in time_ordered(records, strict=strict):
        if not rec.routed or rec.status == Status.CUSTOMER_FAILURE.value:
            continue
        if rec.outage is None:
            raise ValueError(
                f"record {rec.request.payment_id} has no outage flag; "
                "downtime labels come from simulator logs"
            )
        terminal = rec.terminal()
        store.register_terminals([terminal])
        X.append(store.gateway_vector(terminal.gateway_id, rec.ts, schema).values)
        y.append(int(rec.outage))
        store.apply_feedback(rec.request, terminal, rec.outcome(), rec.ts)
    X = np.array(X, dtype=float).reshape(len(y), len(schema))
    return Dataset(X, np.array(y, dtype=np.int8), schema.names, schema.schema_id)
