"""Online success-rate features kept per terminal, per gateway and system-wide.

Two primitives back every feature:

* ``DecayedCounter``: decayed successes over decayed attempts. Both components
  lose half their weight every ``half_life`` seconds.
* ``EventWindow``: the last ``e`` binary outcomes, read as their mean.

A ``FeatureTemplate`` says which request/terminal attributes key a feature and
which primitive holds it. ``FeatureStore`` owns one state object per
(template, attribute values) and is updated through ``apply_feedback``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CHARACTERISTICS,
    Method,
    Outcome,
    PaymentRequest,
    Status,
    Terminal,
    amount_bucket,
)
from .errors import (
    ConfigError,
    SchemaMismatchError,
    SnapshotError,
    UnknownGatewayError,
    UnknownTerminalError,
)

TIME = "time"
EVENT = "event"

DEFAULT_ALPHA = 1.0
DEFAULT_HALF_LIVES = (5, 30, 60, 300)
DEFAULT_EVENT_WINDOWS = (10, 30)
DEFAULT_SUBSETS = (
    ("terminal_id",),
    ("terminal_id", "method"),
    ("terminal_id", "method", "issuer_bank"),
    ("gateway_id",),
    ("gateway_id", "method"),
    (),
)


# ---------------------------------------------------------------------------
# primitives


def decay_value(value: float, dt: float, half_life: float) -> float:
    """Decay ``value`` by ``dt`` seconds of a ``half_life``-second half-life."""
    if half_life <= 0:
        raise ConfigError(f"half_life must be positive, got {half_life}")
    if dt < 0:
        raise ValueError(f"negative elapsed time {dt}; clamp before decaying")
    # multiply by the inverse factor: it underflows to 0 on long idle gaps
    # where 2 ** (dt / half_life) itself would overflow
    return value * 2.0 ** (-dt / half_life)


@dataclass(frozen=True)
class DecayedCounter:
    half_life: float
    successes: float = 0.0
    total: float = 0.0
    last_update: float | None = None

    def __post_init__(self):
        if self.half_life <= 0:
            raise ConfigError(f"half_life must be positive, got {self.half_life}")

    @property
    def empty(self) -> bool:
        return self.last_update is None


def counter_update(c: DecayedCounter, outcome: int, ts: float) -> DecayedCounter:
    """Decay ``c`` to ``ts`` then add one attempt.

    Feedback older than the last update is recorded without decay, and the
    counter's clock never moves backwards.
    """
    if c.last_update is None:
        return DecayedCounter(c.half_life, float(outcome), 1.0, ts)
    dt = max(0.0, ts - c.last_update)
    return DecayedCounter(
        c.half_life,
        decay_value(c.successes, dt, c.half_life) + outcome,
        decay_value(c.total, dt, c.half_life) + 1.0,
        max(ts, c.last_update),
    )


def counter_read(c: DecayedCounter, ts: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Smoothed success rate ``(S + alpha) / (N + alpha)`` decayed to ``ts``."""
    if c.last_update is None:
        return 1.0
    dt = max(0.0, ts - c.last_update)
    s = decay_value(c.successes, dt, c.half_life)
    n = decay_value(c.total, dt, c.half_life)
    if n + alpha <= 0:
        return 1.0
    return min(1.0, (s + alpha) / (n + alpha))


@dataclass(frozen=True)
class EventWindow:
    length: int
    buffer: tuple = ()
    count: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError(f"event window length must be >= 1, got {self.length}")


def event_window_update(w: EventWindow, outcome: int) -> EventWindow:
    buf = w.buffer + (int(outcome),)
    if len(buf) > w.length:
        buf = buf[len(buf) - w.length:]
    return EventWindow(w.length, buf, w.count + 1)


def event_window_read(w: EventWindow) -> float:
    # expanding mean until the window fills, sliding mean afterwards
    if not w.buffer:
        return 1.0
    return sum(w.buffer) / len(w.buffer)


# ---------------------------------------------------------------------------
# templates and schemas


@dataclass(frozen=True)
class FeatureTemplate:
    attributes: tuple
    kind: str
    param: float

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        unknown = [a for a in attrs if a not in CHARACTERISTICS]
        if unknown:
            raise ConfigError(f"unknown characteristics {unknown}")
        if len(set(attrs)) != len(attrs):
            raise ConfigError(f"duplicate characteristics in {attrs}")
        if attrs and "terminal_id" not in attrs and "gateway_id" not in attrs:
            raise ConfigError(f"template {attrs} must include terminal_id or gateway_id")
        if self.kind == TIME:
            if not self.param > 0:
                raise ConfigError(f"half-life must be positive, got {self.param}")
        elif self.kind == EVENT:
            if int(self.param) != self.param or self.param < 1:
                raise ConfigError(f"event window must be a positive integer, got {self.param}")
            object.__setattr__(self, "param", int(self.param))
        else:
            raise ConfigError(f"unknown window kind {self.kind!r}")

    @property
    def level(self) -> str:
        if not self.attributes:
            return "system"
        if "terminal_id" in self.attributes:
            return "terminal"
        return "gateway"

    @property
    def name(self) -> str:
        scope = "+".join(self.attributes) if self.attributes else "system"
        window = f"{self.param:g}s" if self.kind == TIME else f"{self.param}e"
        return f"{scope}@{window}"

    @classmethod
    def parse(cls, name: str) -> "FeatureTemplate":
        """Inverse of ``name``: ``"terminal_id+method@5s"`` or ``"system@10e"``."""
        try:
            scope, window = name.split("@")
        except ValueError:
            raise ConfigError(f"bad template name {name!r}") from None
        attrs = () if scope == "system" else tuple(scope.split("+"))
        if window.endswith("s"):
            return cls(attrs, TIME, float(window[:-1]))
        if window.endswith("e"):
            return cls(attrs, EVENT, int(window[:-1]))
        raise ConfigError(f"bad window suffix in {name!r}")

    def new_state(self):
        if self.kind == TIME:
            return DecayedCounter(float(self.param))
        return EventWindow(int(self.param))


def schema_id_for(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]


class Schema:
    """Ordered, immutable list of templates; ``schema_id`` versions the order."""

    def __init__(self, templates: Iterable[FeatureTemplate]):
        self.templates = tuple(templates)
        if not self.templates:
            raise ConfigError("a schema needs at least one template")
        names = [t.name for t in self.templates]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate templates in schema")
        self.names = tuple(names)
        self.schema_id = schema_id_for(names)
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def __eq__(self, other):
        return isinstance(other, Schema) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"Schema({len(self)} templates, id={self.schema_id})"

    def index(self, name: str) -> int:
        return self._index[name]

    def subset(self, names: Sequence[str]) -> "Schema":
        return Schema(self.templates[self._index[n]] for n in names)

    def gateway_only(self) -> "Schema":
        """Templates keyed by nothing but the gateway (plus system-wide ones)."""
        return Schema(t for t in self.templates if set(t.attributes) <= {"gateway_id"})

    def to_manifest(self) -> dict:
        return {"schema_id": self.schema_id, "templates": list(self.names)}

    @classmethod
    def from_manifest(cls, manifest: dict) -> "Schema":
        schema = cls(FeatureTemplate.parse(n) for n in manifest["templates"])
        expected = manifest.get("schema_id")
        if expected is not None and expected != schema.schema_id:
            raise SchemaMismatchError(
                f"manifest schema_id {expected} does not match its templates ({schema.schema_id})"
            )
        return schema


def default_schema(
    half_lives: Sequence[float] = DEFAULT_HALF_LIVES,
    event_windows: Sequence[int] = DEFAULT_EVENT_WINDOWS,
    subsets: Sequence[tuple] = DEFAULT_SUBSETS,
) -> Schema:
    templates = []
    for attrs in subsets:
        templates += [FeatureTemplate(attrs, TIME, hl) for hl in half_lives]
        templates += [FeatureTemplate(attrs, EVENT, e) for e in event_windows]
    return Schema(templates)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple
    schema_id: str

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


# ---------------------------------------------------------------------------
# the store


def _bindings(request: PaymentRequest | None, terminal: Terminal) -> dict:
    b = {"terminal_id": terminal.terminal_id, "gateway_id": terminal.gateway_id}
    if request is not None:
        b.update(
            method=request.method.value,
            issuer_bank=request.issuer_bank,
            network=request.network,
            amount_bucket=str(amount_bucket(request.amount)),
            merchant_id=request.merchant_id,
        )
    return b


class FeatureStore:
    """Thread-safe map from feature keys to decayed counters / event windows.

    Missing keys read as 1.0, the same value a freshly created key reads, so
    the store only materializes keys that have received feedback.
    """

    def __init__(self, schema: Schema, alpha: float = DEFAULT_ALPHA,
                 terminals: Iterable[Terminal] = ()):
        if alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {alpha}")
        self.schema = schema
        self.alpha = float(alpha)
        self._terminals: dict[str, Terminal] = {}
        self._gateways: dict[str, list[str]] = {}
        self._state: list[dict] = [{} for _ in schema.templates]
        self._lock = threading.RLock()
        self._all = list(range(len(schema)))
        self._resolved: dict[str, list[int]] = {}
        self.register_terminals(terminals)

    @property
    def schema_id(self) -> str:
        return self.schema.schema_id

    # -- registry ----------------------------------------------------------

    def register_terminals(self, terminals: Iterable[Terminal]) -> None:
        with self._lock:
            for t in terminals:
                known = self._terminals.get(t.terminal_id)
                if known is not None:
                    if known.gateway_id != t.gateway_id:
                        raise ConfigError(
                            f"terminal {t.terminal_id} already mapped to gateway {known.gateway_id}"
                        )
                    continue
                self._terminals[t.terminal_id] = t
                self._gateways.setdefault(t.gateway_id, []).append(t.terminal_id)

    @property
    def terminals(self) -> dict:
        return dict(self._terminals)

    @property
    def gateways(self) -> list:
        return sorted(self._gateways)

    def terminal(self, terminal_id: str) -> Terminal:
        try:
            return self._terminals[terminal_id]
        except KeyError:
            raise UnknownTerminalError(f"unknown terminal {terminal_id!r}") from None

    def _check_terminal(self, terminal: Terminal) -> None:
        known = self._terminals.get(terminal.terminal_id)
        if known is None or known.gateway_id != terminal.gateway_id:
            raise UnknownTerminalError(f"unknown terminal {terminal.terminal_id!r}")

    # -- reads ---------------------------------------------------------------

    def _resolve(self, schema: Schema | None) -> list[int]:
        if schema is None or schema is self.schema:
            return self._all
        cached = self._resolved.get(schema.schema_id)
        if cached is not None:
            return cached
        try:
            indices = [self.schema.index(n) for n in schema.names]
        except KeyError as exc:
            raise SchemaMismatchError(
                f"template {exc.args[0]} is not maintained by this store"
            ) from None
        self._resolved[schema.schema_id] = indices
        return indices

    def _read(self, idx: int, key: tuple, ts: float) -> float:
        state = self._state[idx].get(key)
        if state is None:
            return 1.0
        if isinstance(state, DecayedCounter):
            return counter_read(state, ts, self.alpha)
        return event_window_read(state)

    def feature_vector(self, request: PaymentRequest, terminal: Terminal, ts: float,
                       schema: Schema | None = None) -> FeatureVector:
        self._check_terminal(terminal)
        schema = schema or self.schema
        indices = self._resolve(schema)
        b = _bindings(request, terminal)
        templates = self.schema.templates
        with self._lock:
            values = tuple(
                self._read(i, tuple(b[a] for a in templates[i].attributes), ts)
                for i in indices
            )
        return FeatureVector(values, schema.schema_id)

    def gateway_vector(self, gateway_id: str, ts: float, schema: Schema) -> FeatureVector:
        """Feature vector of gateway-scoped and system templates for one gateway."""
        if gateway_id not in self._gateways:
            raise UnknownGatewayError(f"unknown gateway {gateway_id!r}")
        indices = self._resolve(schema)
        b = {"gateway_id": gateway_id}
        templates = self.schema.templates
        with self._lock:
            values = []
            for i in indices:
                attrs = templates[i].attributes
                if not set(attrs) <= {"gateway_id"}:
                    raise SchemaMismatchError(
                        f"template {templates[i].name} needs more than the gateway id"
                    )
                values.append(self._read(i, tuple(b[a] for a in attrs), ts))
        return FeatureVector(tuple(values), schema.schema_id)

    # -- writes --------------------------------------------------------------

    def apply_feedback(self, request: PaymentRequest, terminal: Terminal,
                       outcome: Outcome, ts: float | None = None) -> bool:
        """Fold one attempt outcome into every matching key.

        Customer failures are ignored. Returns whether the store changed.
        """
        self._check_terminal(terminal)
        if outcome.terminal_id != terminal.terminal_id:
            raise ValueError(
                f"outcome for {outcome.terminal_id} applied to terminal {terminal.terminal_id}"
            )
        status = Status(outcome.status)
        if status is Status.CUSTOMER_FAILURE:
            return False
        ts = outcome.timestamp if ts is None else ts
        label = int(status is Status.SUCCESS)
        b = _bindings(request, terminal)
        with self._lock:
            for i, tpl in enumerate(self.schema.templates):
                key = tuple(b[a] for a in tpl.attributes)
                table = self._state[i]
                state = table.get(key)
                if state is None:
                    state = tpl.new_state()
                if tpl.kind == TIME:
                    table[key] = counter_update(state, label, ts)
                else:
                    table[key] = event_window_update(state, label)
        return True

    def n_keys(self) -> int:
        return sum(len(t) for t in self._state)

    def state(self, template_name: str, key: tuple):
        """Raw counter/window for inspection; ``None`` when never updated."""
        return self._state[self.schema.index(template_name)].get(tuple(key))

    # -- persistence -----------------------------------------------------------

    def snapshot(self) -> bytes:
        with self._lock:
            return encode_snapshot(self)

    @classmethod
    def restore(cls, data: bytes, schema: Schema | None = None) -> "FeatureStore":
        return decode_snapshot(data, schema)

    def load(self, data: bytes) -> None:
        """Replace this store's state with a snapshot; untouched on any error."""
        other = decode_snapshot(data, self.schema)
        with self._lock:
            self.alpha = other.alpha
            self._terminals = other._terminals
            self._gateways = other._gateways
            self._state = other._state


# ---------------------------------------------------------------------------
# snapshot codec (layout documented in docs/snapshot_format.md)

MAGIC = b"RFSTORE1"
KEY_SEP = "\x1f"
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_COUNTER = struct.Struct("<ddd")


def encode_snapshot(store: FeatureStore) -> bytes:
    header = {
        "schema_id": store.schema_id,
        "alpha": store.alpha,
        "templates": list(store.schema.names),
        "terminals": [
            [t.terminal_id, t.gateway_id, sorted(m.value for m in t.supported_methods), t.enabled]
            for t in sorted(store._terminals.values(), key=lambda t: t.terminal_id)
        ],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray(MAGIC)
    out += _U32.pack(len(hbytes)) + hbytes
    records = bytearray()
    count = 0
    for idx, table in enumerate(store._state):
        for key in sorted(table):
            state = table[key]
            kbytes = KEY_SEP.join(key).encode()
            records += _U16.pack(idx) + _U16.pack(len(kbytes)) + kbytes
            if isinstance(state, DecayedCounter):
                last = math.nan if state.last_update is None else float(state.last_update)
                records += _COUNTER.pack(state.successes, state.total, last)
            else:
                records += _U32.pack(state.count) + _U16.pack(len(state.buffer))
                records += bytes(state.buffer)
            count += 1
    out += _U32.pack(count) + records
    out += _U32.pack(zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise SnapshotError("truncated snapshot payload")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def decode_snapshot(data: bytes, schema: Schema | None = None) -> FeatureStore:
    data = bytes(data)
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise SnapshotError("not a feature-store snapshot (bad magic or too short)")
    (crc,) = _U32.unpack(data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise SnapshotError("snapshot checksum mismatch (truncated or corrupted)")
    r = _Reader(data, len(data) - 4)
    r.take(len(MAGIC))
    (hlen,) = r.unpack(_U32)
    try:
        header = json.loads(r.take(hlen).decode())
        snap_schema = Schema(FeatureTemplate.parse(n) for n in header["templates"])
    except (ValueError, KeyError) as exc:
        raise SnapshotError(f"bad snapshot header: {exc}") from exc
    if snap_schema.schema_id != header.get("schema_id"):
        raise SnapshotError("snapshot header schema_id does not match its templates")
    if schema is not None and schema.schema_id != snap_schema.schema_id:
        raise SnapshotError(
            f"snapshot schema {snap_schema.schema_id} does not match expected {schema.schema_id}"
        )
    terminals = [Terminal(tid, gid, frozenset(Method(m) for m in methods), enabled)
                 for tid, gid, methods, enabled in header["terminals"]]
    store = FeatureStore(snap_schema, header["alpha"], terminals)
    (count,) = r.unpack(_U32)
    templates = snap_schema.templates
    for _ in range(count):
        (idx,) = r.unpack(_U16)
        if idx >= len(templates):
            raise SnapshotError(f"record references template {idx} of {len(templates)}")
        (klen,) = r.unpack(_U16)
        raw = r.take(klen).decode()
        tpl = templates[idx]
        key = tuple(raw.split(KEY_SEP)) if tpl.attributes else ()
        if len(key) != len(tpl.attributes):
            raise SnapshotError(f"key arity mismatch for {tpl.name}")
        if tpl.kind == TIME:
            s, n, last = r.unpack(_COUNTER)
            store._state[idx][key] = DecayedCounter(
                float(tpl.param), s, n, None if math.isnan(last) else last
            )
        else:
            (seen,) = r.unpack(_U32)
            (blen,) = r.unpack(_U16)
            buf = tuple(r.take(blen))
            store._state[idx][key] = EventWindow(int(tpl.param), buf, seen)
    if r.pos != r.end:
        raise SnapshotError("trailing bytes after snapshot records")
    return store
