"""Domain types and elementary payment math.

Everything here is an immutable value. The transaction log helpers at the
bottom read and write the newline-delimited JSON log shared by the simulator,
the training-set builder and the ``replay`` command.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping

from .errors import InvalidAmountError, LogOrderError, UndefinedInputError


class Method(str, enum.Enum):
    CARD = "card"
    UPI = "upi"
    NETBANKING = "netbanking"
    WALLET = "wallet"


class Status(str, enum.Enum):
    SUCCESS = "success"
    GATEWAY_FAILURE = "gateway_failure"
    CUSTOMER_FAILURE = "customer_failure"


# Log-only status for payments the router could not place anywhere.
NO_ROUTE = "no_route"

MAX_AMOUNT_BUCKET = 5

# Terminal characteristics that feature templates may bind.
CHARACTERISTICS = (
    "terminal_id",
    "gateway_id",
    "method",
    "issuer_bank",
    "network",
    "amount_bucket",
    "merchant_id",
)


@dataclass(frozen=True)
class PaymentRequest:
    payment_id: str
    timestamp: int
    merchant_id: str
    method: Method
    issuer_bank: str
    network: str
    amount: int
    extra_attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.payment_id:
            raise ValueError("payment_id must be non-empty")
        if self.amount <= 0:
            raise InvalidAmountError(f"amount must be positive, got {self.amount}")
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if not isinstance(self.method, Method):
            object.__setattr__(self, "method", Method(self.method))


@dataclass(frozen=True)
class Terminal:
    terminal_id: str
    gateway_id: str
    supported_methods: frozenset = frozenset(Method)
    enabled: bool = True

    def __post_init__(self):
        if not self.terminal_id:
            raise ValueError("terminal_id must be non-empty")
        if not self.gateway_id:
            raise ValueError(f"terminal {self.terminal_id} has no gateway_id")
        methods = frozenset(Method(m) for m in self.supported_methods)
        object.__setattr__(self, "supported_methods", methods)

    def supports(self, method: Method) -> bool:
        return method in self.supported_methods


@dataclass(frozen=True)
class Outcome:
    payment_id: str
    terminal_id: str
    status: Status
    timestamp: int

    def __post_init__(self):
        if not isinstance(self.status, Status):
            object.__setattr__(self, "status", Status(self.status))


@dataclass(frozen=True)
class MetricsCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")


def success_rate(successes: int, total: int) -> float:
    """Successful transactions divided by all transactions in a scope."""
    if total < 1:
        raise UndefinedInputError("success rate is undefined for zero transactions")
    if not 0 <= successes <= total:
        raise ValueError(f"successes={successes} outside [0, {total}]")
    return successes / total


def amount_bucket(amount: int) -> int:
    """Base-10 log bucket of an amount in minor units, capped at 5."""
    if amount <= 0:
        raise InvalidAmountError(f"amount must be positive, got {amount}")
    # integer digit count avoids float log10 error at exact powers of ten
    return min(MAX_AMOUNT_BUCKET, len(str(int(amount))) - 1)


def is_customer_failure(outcome: Outcome) -> bool:
    return outcome.status is Status.CUSTOMER_FAILURE


def outcome_label(status: Status) -> int:
    """Binary label of a non-customer outcome: success 1, gateway failure 0."""
    status = Status(status)
    if status is Status.CUSTOMER_FAILURE:
        raise ValueError("customer failures carry no terminal label")
    return int(status is Status.SUCCESS)


# ---------------------------------------------------------------------------
# transaction log

LOG_KEYS = (
    "payment_id",
    "ts",
    "merchant_id",
    "method",
    "issuer_bank",
    "network",
    "amount",
    "terminal_id",
    "gateway_id",
    "status",
)


@dataclass(frozen=True)
class LogRecord:
    """One routed attempt (or a failed-to-route payment) in a transaction log."""

    request: PaymentRequest
    terminal_id: str | None
    gateway_id: str | None
    status: str
    ts: int
    attempt: int = 0
    outage: bool | None = None

    @property
    def routed(self) -> bool:
        return self.terminal_id is not None and self.status != NO_ROUTE

    def terminal(self) -> Terminal:
        return Terminal(self.terminal_id, self.gateway_id)

    def outcome(self) -> Outcome:
        return Outcome(self.request.payment_id, self.terminal_id, Status(self.status), self.ts)

    def to_dict(self) -> dict:
        req = self.request
        d = {
            "payment_id": req.payment_id,
            "ts": self.ts,
            "merchant_id": req.merchant_id,
            "method": req.method.value,
            "issuer_bank": req.issuer_bank,
            "network": req.network,
            "amount": req.amount,
            "terminal_id": self.terminal_id,
            "gateway_id": self.gateway_id,
            "status": self.status,
            "attempt": self.attempt,
        }
        if self.outage is not None:
            d["outage"] = int(self.outage)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LogRecord":
        missing = [k for k in LOG_KEYS if k not in d]
        if missing:
            raise ValueError(f"log record missing keys {missing}")
        req = PaymentRequest(
            payment_id=str(d["payment_id"]),
            timestamp=int(d["ts"]),
            merchant_id=str(d["merchant_id"]),
            method=Method(d["method"]),
            issuer_bank=str(d["issuer_bank"]),
            network=str(d["network"]),
            amount=int(d["amount"]),
        )
        outage = d.get("outage")
        return cls(
            request=req,
            terminal_id=d["terminal_id"],
            gateway_id=d["gateway_id"],
            status=str(d["status"]),
            ts=int(d["ts"]),
            attempt=int(d.get("attempt", 0)),
            outage=None if outage is None else bool(outage),
        )


def write_log(records: Iterable[LogRecord], fh: IO[str]) -> int:
    n = 0
    for rec in records:
        fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
        n += 1
    return n


def iter_log(fh: IO[str]) -> Iterator[LogRecord]:
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield LogRecord.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"bad log record on line {lineno}: {exc}") from exc


def read_log(path) -> list[LogRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_log(fh))


def time_ordered(records: Iterable[LogRecord], strict: bool = False) -> list[LogRecord]:
    """Return records in timestamp order (stable for equal timestamps).

    With ``strict`` an out-of-order input raises instead of being sorted.
    """
    records = list(records)
    for prev, cur in zip(records, records[1:]):
        if cur.ts < prev.ts:
            if strict:
                raise LogOrderError(
                    f"log not sorted: ts {cur.ts} of {cur.request.payment_id} "
                    f"follows ts {prev.ts}"
                )
            return sorted(records, key=lambda r: r.ts)
    return records

