"""Newline-delimited JSON routing service over stdio or TCP.

One JSON object per line in, one per line out, in order. Every message
carries ``"v": 1``. Field-by-field layout lives in docs/protocol.md.

No wall clock is read here: route and feedback times come from the
messages, so a transaction log of the served feedback replays offline
into a byte-identical feature-store snapshot.
"""

from __future__ import annotations

import json
import logging
import os
import socketserver
import sys
import threading
from typing import IO

from .core import LogRecord, Method, Outcome, PaymentRequest, Status
from .dynamic_router import Router
from .errors import SmartRouteError
from .feature_store import FeatureStore

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
REQUEST_FIELDS = ("payment_id", "ts", "merchant_id", "method", "issuer_bank", "network", "amount")


class ProtocolError(ValueError):
    pass


def _require(msg: dict, key: str, kind):
    if key not in msg:
        raise ProtocolError(f"missing field {key!r}")
    value = msg[key]
    # bool is an int subclass; never accept it for numeric fields
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ProtocolError(f"field {key!r} has the wrong type")
    return value


def parse_request(msg: dict) -> PaymentRequest:
    method = _require(msg, "method", str)
    try:
        method = Method(method)
    except ValueError:
        raise ProtocolError(f"unknown method {method!r}") from None
    return PaymentRequest(
        payment_id=_require(msg, "payment_id", str),
        timestamp=_require(msg, "ts", int),
        merchant_id=_require(msg, "merchant_id", str),
        method=method,
        issuer_bank=_require(msg, "issuer_bank", str),
        network=_require(msg, "network", str),
        amount=_require(msg, "amount", int),
    )


def transaction_record(request: PaymentRequest, terminal, status: Status, ts: int,
                       attempt: int) -> LogRecord:
    return LogRecord(request, terminal.terminal_id, terminal.gateway_id, status.value, ts, attempt)


class RoutingService:
    """Protocol handler around a ``Router``; safe to share between connections."""

    def __init__(self, router: Router, snapshot_path: str | None = None,
                 log_fh: IO[str] | None = None):
        self.router = router
        self.snapshot_path = snapshot_path
        self.log_fh = log_fh
        self._requests: dict[str, PaymentRequest] = {}
        self._lock = threading.Lock()

    @property
    def store(self) -> FeatureStore:
        return self.router.store

    # -- message handlers --------------------------------------------------------

    def route(self, msg: dict) -> dict:
        request = parse_request(msg)
        decision = self.router.route(request, request.timestamp)
        with self._lock:
            self._requests[request.payment_id] = request
        return {
            "type": "route_result",
            "payment_id": request.payment_id,
            "terminals": [[tid, p] for tid, p in decision.pairs()],
            "degraded": decision.degraded,
        }

    def feedback(self, msg: dict) -> dict:
        payment_id = _require(msg, "payment_id", str)
        terminal_id = _require(msg, "terminal_id", str)
        ts = _require(msg, "ts", int)
        try:
            status = Status(_require(msg, "status", str))
        except ValueError:
            raise ProtocolError(f"unknown status {msg['status']!r}") from None
        # the lock keeps feedback application and its log line in the same order
        with self._lock:
            request = self._requests.get(payment_id)
            if request is None:
                raise ProtocolError(f"no open route for payment {payment_id!r}")
            terminal = self.store.terminal(terminal_id)
            attempt = len(self.router.decision(payment_id).attempted)
            decision = self.router.record_outcome(
                request, terminal, Outcome(payment_id, terminal_id, status, ts), ts)
            if decision.resolved:
                del self._requests[payment_id]
            if self.log_fh is not None:
                rec = transaction_record(request, terminal, status, ts, attempt)
                self.log_fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
                self.log_fh.flush()
        return {"type": "ack", "payment_id": payment_id, "terminal_id": terminal_id,
                "resolved": decision.resolved}

    def snapshot(self, msg: dict) -> dict:
        if not self.snapshot_path:
            raise ProtocolError("service was started without a snapshot path")
        with self._lock:
            data = self.store.snapshot()
        tmp = self.snapshot_path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self.snapshot_path)
        return {"type": "snapshot_result", "path": self.snapshot_path, "bytes": len(data)}

    HANDLERS = {"route": route, "feedback": feedback, "snapshot": snapshot}

    def handle(self, msg) -> dict:
        if not isinstance(msg, dict):
            raise ProtocolError("message must be a JSON object")
        if msg.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported or missing protocol version {msg.get('v')!r}")
        handler = self.HANDLERS.get(msg.get("type"))
        if handler is None:
            raise ProtocolError(f"unknown message type {msg.get('type')!r}")
        return handler(self, msg)

    def handle_line(self, line: str) -> str:
        """Answer one request line; errors become ``error`` responses."""
        try:
            reply = self.handle(json.loads(line))
        except json.JSONDecodeError as exc:
            reply = {"type": "error", "reason": f"malformed JSON: {exc.msg}"}
        except (ProtocolError, SmartRouteError, KeyError, ValueError) as exc:
            reason = exc.args[0] if exc.args else type(exc).__name__
            reply = {"type": "error", "reason": str(reason)}
        return json.dumps({"v": PROTOCOL_VERSION, **reply}, separators=(",", ":"))

    # -- transports ----------------------------------------------------------------

    def serve_stream(self, fin: IO[str], fout: IO[str]) -> int:
        n = 0
        for line in fin:
            if not line.strip():
                continue
            fout.write(self.handle_line(line) + "\n")
            fout.flush()
            n += 1
        return n

    def serve_stdio(self) -> int:
        return self.serve_stream(sys.stdin, sys.stdout)

    def tcp_server(self, host: str, port: int) -> socketserver.ThreadingTCPServer:
        service = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    line = raw.decode("utf-8", errors="replace")
                    if not line.strip():
                        continue
                    self.wfile.write((service.handle_line(line) + "\n").encode())
                    self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        return Server((host, port), Handler)


def parse_listen(addr: str) -> tuple[str, int] | None:
    """``"stdio"`` → None, ``"host:port"`` → (host, port)."""
    if addr == "stdio":
        return None
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"--listen expects stdio or HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def replay_store(records, store: FeatureStore) -> FeatureStore:
    """Apply logged attempts to ``store`` in file order (the order they were served)."""
    for rec in records:
        if rec.routed:
            # keeps the registered terminal (and its method set) when already known
            store.register_terminals([rec.terminal()])
            store.apply_feedback(rec.request, store.terminal(rec.terminal_id), rec.outcome(),
                                 rec.ts)
    return store
