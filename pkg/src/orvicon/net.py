"""Loopback stream services and the transports the harness talks through.

In ``--net`` mode the provider store and the data-space connector run in a
child process behind two TCP endpoints (ingestion, data space). The
simulated clock crosses the process boundary inside message bodies
(``sent_at`` / ``received_at_s``); the service clock only moves forward.
"""

from __future__ import annotations

import multiprocessing as mp
import random
import socket
import socketserver
import threading
from typing import Any

from .audit import AuditLog, AuditRecord
from .config import ScenarioConfig, parse_config
from .dataspace import DataSpace
from .provider import ProviderError, ProviderStore
from .wire import Envelope, WireError, make_envelope, recv_message, send_message, sign_envelope


def build_services(cfg: ScenarioConfig, store_dir=None) -> tuple[DataSpace, ProviderStore]:
    store = ProviderStore(store_dir)
    for reg in cfg.registrations:
        store.register_sensor(reg, cfg.dataset_description)
    ds = DataSpace(cfg.approved_certs, rng=random.Random(f"{cfg.seed}:dataspace"), audit=AuditLog())
    for m in cfg.members:
        if m.role == "provider":
            ds.attach_store(m.member_id, store)
    return ds, store


def ingest_reply(ds: DataSpace, store: ProviderStore, env: Envelope, rng: random.Random) -> Envelope:
    try:
        counts = store.ingest_envelope(env, ds.key_for)
        body = dict(counts, in_reply_to=env.msg_id)
        msg_type = "INGEST_ACK"
    except ProviderError as e:
        body = {"error": type(e).__name__, "message": str(e), "in_reply_to": env.msg_id}
        msg_type = "ERROR"
    return sign_envelope(make_envelope("provider-ingest", msg_type, body, rng), ds.operator_secret)


class InProcessTransport:
    mode = "in-process"

    def __init__(self, cfg: ScenarioConfig, store_dir=None):
        self.ds, self.store = build_services(cfg, store_dir)
        self._rng = random.Random(f"{cfg.seed}:ingest")

    def tick(self, now: int) -> None:
        self.ds.expire_contracts(now)

    def request(self, env: Envelope, now: int) -> Envelope:
        return self.ds.handle(env, now)

    def ingest(self, env: Envelope, now: int) -> Envelope:
        return ingest_reply(self.ds, self.store, env, self._rng)

    def revoke_member(self, member_id: str, now: int) -> None:
        self.ds.revoke_member(member_id, now)

    def close(self, end_s: int) -> dict[str, Any]:
        self.ds.expire_contracts(end_s)
        return {"audit": list(self.ds.audit.records),
                "policy_counts": self.ds.policy_counts,
                "store_digest": self.store.content_digest()}


# ------------------------------------------------------------------ services

class _Clock:
    def __init__(self, t: int):
        self.now = t
        self._lock = threading.Lock()

    def observe(self, t: Any) -> int:
        with self._lock:
            if isinstance(t, int) and t > self.now:
                self.now = t
            return self.now


def _make_handler(fn):
    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            while True:
                try:
                    env = recv_message(self.request)
                except (ConnectionError, OSError):
                    return
                except WireError:
                    return  # unparseable stream: drop the connection
                send_message(self.request, fn(env))
    return Handler


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve(raw_config: dict, store_dir, conn) -> None:
    """Child-process entry: run both endpoints until told to stop."""
    cfg = parse_config(raw_config)
    ds, store = build_services(cfg, store_dir)
    clock = _Clock(cfg.start_s)
    rng = random.Random(f"{cfg.seed}:ingest")
    lock = threading.Lock()

    def on_dataspace(env: Envelope) -> Envelope:
        return ds.handle(env, clock.observe(env.body.get("sent_at")))

    def on_ingest(env: Envelope) -> Envelope:
        clock.observe(env.body.get("received_at_s"))
        with lock:
            return ingest_reply(ds, store, env, rng)

    servers = [_Server(("127.0.0.1", 0), _make_handler(on_ingest)),
               _Server(("127.0.0.1", 0), _make_handler(on_dataspace))]
    threads = [threading.Thread(target=s.serve_forever, daemon=True) for s in servers]
    for t in threads:
        t.start()
    conn.send(("ports", servers[0].server_address[1], servers[1].server_address[1]))
    try:
        while True:
            msg = conn.recv()
            if msg[0] == "revoke_member":
                try:
                    ds.revoke_member(msg[1], clock.observe(msg[2]))
                    conn.send(("ok",))
                except Exception as e:  # reported back to the harness
                    conn.send(("error", type(e).__name__, str(e)))
            elif msg[0] == "stop":
                ds.expire_contracts(clock.observe(msg[1]))
                conn.send(("done", [r.to_dict() for r in ds.audit.records], ds.policy_counts,
                           store.content_digest()))
                return
    finally:
        for s in servers:
            s.shutdown()
            s.server_close()


class NetTransport:
    mode = "net"

    def __init__(self, cfg: ScenarioConfig, store_dir=None, timeout_s: float = 30.0):
        ctx = mp.get_context("spawn")
        self._conn, child = ctx.Pipe()
        self._proc = ctx.Process(target=serve, args=(cfg.raw, store_dir, child), daemon=True)
        self._proc.start()
        if not self._conn.poll(timeout_s):
            self._proc.kill()
            raise RuntimeError("service process did not start")
        _, ingest_port, ds_port = self._conn.recv()
        self._ingest = socket.create_connection(("127.0.0.1", ingest_port), timeout=timeout_s)
        self._ds = socket.create_connection(("127.0.0.1", ds_port), timeout=timeout_s)

    def tick(self, now: int) -> None:
        pass  # the service expires contracts lazily as messages advance its clock

    def request(self, env: Envelope, now: int) -> Envelope:
        send_message(self._ds, env)
        return recv_message(self._ds)

    def ingest(self, env: Envelope, now: int) -> Envelope:
        send_message(self._ingest, env)
        return recv_message(self._ingest)

    def revoke_member(self, member_id: str, now: int) -> None:
        self._conn.send(("revoke_member", member_id, now))
        reply = self._conn.recv()
        if reply[0] == "error":
            from . import dataspace
            raise getattr(dataspace, reply[1], RuntimeError)(reply[2])

    def close(self, end_s: int) -> dict[str, Any]:
        try:
            self._ingest.close()
            self._ds.close()
            self._conn.send(("stop", end_s))
            _, audit, counts, digest = self._conn.recv()
        finally:
            self._proc.join(timeout=10)
            if self._proc.is_alive():
                self._proc.kill()
        return {"audit": [AuditRecord.from_dict(a) for a in audit], "policy_counts": counts,
                "store_digest": digest}
