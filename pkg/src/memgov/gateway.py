"""Line-delimited JSON front door for the memory action set.

Every request passes through the write gate (add, update, delete) or the read
gate (retrieve). One request per line, one response per line.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import signal
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import CliConfig
from .errors import BindFailure, MalformedRequest, MemgovError, StorageFailure, UnknownIdx
from .ledger import Keyring, Ledger, normalize_slots
from .read_gate import AccessPolicy, Identity, prune_stale, retrieve
from .reconciler import BackgroundReconciler, append_report_csv, replay_state, schedule
from .store import MemoryState
from .write_gate import PROVENANCE_INVALID, MemoryDelta, SlotOracle, WriteGate

logger = logging.getLogger(__name__)

ACTIONS = ("add", "update", "delete", "retrieve")
WRITE_ACTIONS = ("add", "update", "delete")


@dataclass(frozen=True)
class Request:
    request_id: str
    identity: Identity
    action: str
    fields: dict[str, Any]
    mac: str | None = None
    raw: dict[str, Any] | None = None


def encode(obj: dict[str, Any]) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def request_mac(record: dict[str, Any], key: bytes) -> str:
    """HMAC over the canonical request record without its ``mac`` field."""
    body = {k: v for k, v in record.items() if k != "mac"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return hmac.new(key, blob, hashlib.sha256).hexdigest()


def _parse_attrs(attrs: Any) -> frozenset[str]:
    if attrs is None:
        return frozenset()
    if isinstance(attrs, dict):
        return frozenset(f"{k}={v}" for k, v in attrs.items())
    if isinstance(attrs, list) and all(isinstance(a, str) and "=" in a for a in attrs):
        return frozenset(attrs)
    raise MalformedRequest("attrs must be an object or a list of key=value strings")


def _need(rec: dict, key: str, typ: type | tuple[type, ...]) -> Any:
    if key not in rec:
        raise MalformedRequest(f"missing field {key!r}")
    val = rec[key]
    if not isinstance(val, typ) or isinstance(val, bool) and typ is int:
        raise MalformedRequest(f"field {key!r} has wrong type")
    return val


def parse_request(line: str | bytes) -> Request:
    try:
        rec = json.loads(line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedRequest(f"not a JSON record: {exc}") from None
    if not isinstance(rec, dict):
        raise MalformedRequest("request must be a JSON object")
    rid = _need(rec, "id", str)
    principal = _need(rec, "principal", str)
    if not principal:
        raise MalformedRequest("principal must be nonempty")
    action = _need(rec, "action", str)
    if action not in ACTIONS:
        raise MalformedRequest(f"unknown action {action!r}")
    identity = Identity(principal, _parse_attrs(rec.get("attrs")))
    fields: dict[str, Any] = {}
    try:
        if action == "add":
            fields["content"] = _need(rec, "content", str)
            fields["scope"] = _need(rec, "scope", str)
            fields["slots"] = normalize_slots(rec.get("slots", []))
            fields["core"] = bool(rec.get("core", False))
        elif action == "update":
            fields["idx"] = _need(rec, "idx", int)
            fields["content"] = _need(rec, "content", str)
            fields["slots"] = normalize_slots(rec.get("slots", []))
            fields["privileged"] = bool(rec.get("privileged", False))
        elif action == "delete":
            fields["idx"] = _need(rec, "idx", int)
            fields["privileged"] = bool(rec.get("privileged", False))
        else:
            fields["query"] = _need(rec, "query", str)
            k = rec.get("k", 5)
            if not isinstance(k, int) or isinstance(k, bool) or k < 0:
                raise MalformedRequest("k must be a non-negative integer")
            fields["k"] = k
    except (ValueError, TypeError) as exc:
        raise MalformedRequest(str(exc)) from None
    mac = rec.get("mac")
    if mac is not None and not isinstance(mac, str):
        raise MalformedRequest("mac must be a hex string")
    return Request(rid, identity, action, fields, mac, rec)


class Gateway:
    """Owns the store, ledger and gates; ``handle`` is safe to call from many threads."""

    def __init__(self, cfg: CliConfig, ledger: Ledger, state: MemoryState, policy: AccessPolicy):
        self.cfg = cfg
        self.ledger = ledger
        self.state = state
        self.policy = policy
        self.lock = threading.RLock()
        self.gate = WriteGate(state, ledger, SlotOracle(cfg.multi_valued_attributes), cfg.gate_mode, self.lock)
        self.reconciler = BackgroundReconciler(lambda: self.state, ledger, cfg.reconcile, self.lock)
        self._closed = False

    @classmethod
    def open(cls, cfg: CliConfig) -> "Gateway":
        """Open a data directory, verifying the ledger and replaying it into a fresh store."""
        cfg.data_dir.mkdir(parents=True, exist_ok=True)
        keyring = Keyring.load(cfg.resolved_keyring)
        ledger = Ledger(cfg.ledger_path, keyring)
        state = replay_state(ledger, cfg.embedding_dim)
        return cls(cfg, ledger, state, AccessPolicy.load(cfg.resolved_policy))

    @classmethod
    def in_memory(cls, cfg: CliConfig, keyring: Keyring, policy: AccessPolicy) -> "Gateway":
        ledger = Ledger(None, keyring)
        return cls(cfg, ledger, MemoryState(ledger, cfg.embedding_dim), policy)

    # --- request handling --------------------------------------------------

    def handle_line(self, line: str | bytes, seen_ids: set[str] | None = None) -> dict[str, Any]:
        try:
            req = parse_request(line)
        except MalformedRequest as exc:
            rid = None
            try:
                rec = json.loads(line)
                if isinstance(rec, dict) and isinstance(rec.get("id"), str):
                    rid = rec["id"]
            except (ValueError, UnicodeDecodeError):
                pass
            return {"id": rid, "status": "error", "error": str(exc)}
        if seen_ids is not None:
            if req.request_id in seen_ids:
                return {"id": req.request_id, "status": "error", "error": "duplicate request id"}
            seen_ids.add(req.request_id)
        return self.handle(req)

    def handle(self, req: Request) -> dict[str, Any]:
        base = {"id": req.request_id}
        if req.mac is not None:
            keyring = self.ledger.keyring
            ok = req.identity.principal_id in keyring and hmac.compare_digest(
                req.mac, request_mac(req.raw or {}, keyring.key(req.identity.principal_id))
            )
            if not ok:
                return {**base, "status": "denied", "reason": "BadMac"}
        try:
            if req.action == "retrieve":
                return {**base, **self._retrieve(req)}
            return {**base, **self._write(req)}
        except UnknownIdx as exc:
            return {**base, "status": "error", "error": f"unknown idx {exc.args[0]}"}
        except StorageFailure as exc:
            logger.error("storage failure: %s", exc)
            return {**base, "status": "error", "error": "storage failure"}
        except MemgovError as exc:
            return {**base, "status": "error", "error": str(exc)}

    def _retrieve(self, req: Request) -> dict[str, Any]:
        # retrieve moves last_used_at, so it holds the writer slot
        with self.lock:
            res = retrieve(req.fields["query"], req.identity, req.fields["k"], self.state,
                           self.cfg.decay, self.policy)
            units = [
                {"idx": u.idx, "content": u.content, "slots": [list(t) for t in u.slots],
                 "scope": u.scope, "similarity": round(s, 12)}
                for u, s in zip(res.units, res.similarities)
            ]
        return {"status": "ok", "units": units}

    def _write(self, req: Request) -> dict[str, Any]:
        f = req.fields
        src = req.identity.principal_id
        with self.lock:
            ts = self.state.clock + 1
            if req.action == "add":
                delta = MemoryDelta.add(f["content"], f["slots"], src, f["scope"], ts, f["core"])
            elif req.action == "update":
                delta = MemoryDelta.update(f["idx"], f["content"], f["slots"], src, ts, f["privileged"])
            else:
                delta = MemoryDelta.delete(f["idx"], src, ts, f["privileged"])
            self.state.clock = ts
            result = self.gate.commit(delta)
            self._maintain(ts)
        if not result.admitted:
            status = "denied" if result.decision.reason == PROVENANCE_INVALID else "rejected"
            return {"status": status, "decision": result.decision.to_dict()}
        body: dict[str, Any] = {"status": "ok", "idx": result.idx, "seq": result.seq}
        if req.action == "delete":
            body["removed"] = bool(result.removed)
        return body

    def _maintain(self, step: int) -> None:
        if not schedule(step, self.cfg.reconcile):
            return
        if self.cfg.auto_prune:
            prune_stale(self.state, self.cfg.decay, self.ledger)
        if self.cfg.auto_reconcile:
            self.reconciler.join()
            self.reconciler.start(step)

    # --- lifecycle ---------------------------------------------------------

    def close(self, snapshot: bool = True) -> None:
        if self._closed:
            return
        self._closed = True
        self.reconciler.join()
        self.gate.drain()
        self.gate.close()
        if self.reconciler.reports and self.ledger.path is not None:
            append_report_csv(self.cfg.report_path, self.reconciler.reports)
        self.ledger.close()
        if snapshot and self.ledger.path is not None:
            with self.lock:
                self.state.export_snapshot(self.cfg.snapshot_path)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        gateway: Gateway = self.server.gateway  # type: ignore[attr-defined]
        seen: set[str] = set()
        for line in self.rfile:
            if not line.strip():
                continue
            resp = gateway.handle_line(line, seen)
            try:
                self.wfile.write(encode(resp))
                self.wfile.flush()
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


if hasattr(socketserver, "ThreadingUnixStreamServer"):

    class _UnixServer(socketserver.ThreadingUnixStreamServer):
        daemon_threads = True


def make_server(listen_address: str, gateway: Gateway) -> socketserver.BaseServer:
    """``host:port`` for TCP, ``unix:/path`` for a Unix-domain socket."""
    try:
        if listen_address.startswith("unix:"):
            path = listen_address[5:]
            if os.path.exists(path):
                os.unlink(path)
            server = _UnixServer(path, _Handler)
        else:
            host, _, port = listen_address.rpartition(":")
            server = _TCPServer((host or "127.0.0.1", int(port)), _Handler)
    except (OSError, ValueError) as exc:
        raise BindFailure(f"cannot listen on {listen_address}: {exc}") from exc
    server.gateway = gateway  # type: ignore[attr-defined]
    return server


def server_address(server: socketserver.BaseServer) -> str:
    addr = server.server_address
    if isinstance(addr, tuple):
        return f"{addr[0]}:{addr[1]}"
    return f"unix:{addr}"


def serve(listen_address: str, cfg: CliConfig, ready: threading.Event | None = None,
          install_signals: bool = True) -> None:
    """Run until SIGTERM/SIGINT (or ``server.shutdown``), then flush and snapshot."""
    gateway = Gateway.open(cfg)
    server = make_server(listen_address, gateway)
    stop = threading.Event()

    def _stop(*_: object) -> None:
        if not stop.is_set():
            stop.set()
            threading.Thread(target=server.shutdown, daemon=True).start()

    if install_signals and threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, _stop)
        signal.signal(signal.SIGINT, _stop)
    logger.info("listening on %s", server_address(server))
    print(f"listening on {server_address(server)}", flush=True)
    if ready is not None:
        ready.set()
    try:
        server.serve_forever(poll_interval=0.1)
    finally:
        server.server_close()
        gateway.close()
        if listen_address.startswith("unix:"):
            Path(listen_address[5:]).unlink(missing_ok=True)


class Client:
    """Minimal blocking client for the line protocol."""

    def __init__(self, address: str, timeout: float = 10.0):
        if address.startswith("unix:"):
            self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self.sock.connect(address[5:])
        else:
            host, _, port = address.rpartition(":")
            self.sock = socket.create_connection((host or "127.0.0.1", int(port)))
        self.sock.settimeout(timeout)
        self._rfile = self.sock.makefile("rb")

    def call(self, request: dict[str, Any]) -> dict[str, Any]:
        self.sock.sendall(encode(request))
        return json.loads(self._rfile.readline())

    def send_raw(self, line: bytes) -> dict[str, Any]:
        self.sock.sendall(line)
        return json.loads(self._rfile.readline())

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
