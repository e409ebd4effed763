"""Hash-chained, append-only audit log."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .wire import canonical_json

AUDIT_EVENTS = frozenset({
    "ENROLL", "OFFER", "REQUEST", "DECISION", "COUNTERSIGN", "DATA_TRANSFER",
    "POLICY_DENY", "REVOKE", "EXPIRE",
})
GENESIS = bytes(32)


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    at: int
    actor: str
    event: str
    details: dict[str, Any]
    chain_hash: str

    def body(self) -> dict[str, Any]:
        return {"seq": self.seq, "at": self.at, "actor": self.actor,
                "event": self.event, "details": self.details}

    def canonical(self) -> bytes:
        return canonical_json(self.body())

    def to_dict(self) -> dict[str, Any]:
        return dict(self.body(), chain_hash=self.chain_hash)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AuditRecord":
        return cls(int(d["seq"]), int(d["at"]), str(d["actor"]), str(d["event"]),
                   d["details"], str(d["chain_hash"]))


def chain_step(prev_hash: bytes, canonical: bytes) -> bytes:
    return hashlib.sha256(prev_hash + canonical).digest()


class AuditLog:
    def __init__(self, path: str | os.PathLike | None = None):
        self.records: list[AuditRecord] = []
        self._head = GENESIS
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("", "utf-8")

    @property
    def head(self) -> str:
        return self._head.hex()

    def append(self, at: int, actor: str, event: str, details: dict[str, Any]) -> AuditRecord:
        if event not in AUDIT_EVENTS:
            raise ValueError(f"unknown audit event {event!r}")
        with self._lock:
            seq = len(self.records) + 1
            body = {"seq": seq, "at": at, "actor": actor, "event": event, "details": details}
            digest = chain_step(self._head, canonical_json(body))
            rec = AuditRecord(seq, at, actor, event, details, digest.hex())
            self.records.append(rec)
            self._head = digest
            if self.path is not None:
                with open(self.path, "ab") as f:
                    f.write(canonical_json(rec.to_dict()) + b"\n")
            return rec

    def dump(self, path: str | os.PathLike) -> None:
        write_audit(path, self.records)


def write_audit(path: str | os.PathLike, records: Iterable[AuditRecord]) -> None:
    with open(path, "wb") as f:
        for r in records:
            f.write(canonical_json(r.to_dict()) + b"\n")


def read_audit(path: str | os.PathLike) -> list[AuditRecord]:
    out = []
    with open(path, "rb") as f:
        for line in f:
            if line.strip():
                out.append(AuditRecord.from_dict(json.loads(line)))
    return out


def verify_audit_chain(records: list[AuditRecord]) -> int | None:
    """None when the chain verifies, else the first sequence number that fails."""
    prev = GENESIS
    for i, rec in enumerate(records):
        expected_seq = i + 1
        if rec.seq != expected_seq:
            return expected_seq
        digest = chain_step(prev, rec.canonical())
        if digest.hex() != rec.chain_hash:
            return rec.seq
        prev = digest
    return None
