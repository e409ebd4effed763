"""Byte-exact formats shared by every component.

Uplink frame (26 bytes, big-endian)::

    off  size  field
    0    1     version            (== 1)
    1    8     device_id
    9    4     frame_counter
    13   8     timestamp_s
    21   2     temperature_cdeg   (signed)
    23   1     battery_pct        (0..100)
    24   2     crc                CRC-16/CCITT-FALSE over bytes 0..23

Envelopes are JSON documents signed with HMAC-SHA256 over their canonical
encoding (sorted keys, no whitespace, signature excluded) and travel over a
byte stream as ``[u32 length][canonical envelope incl. signature]``.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import random
import struct
from dataclasses import dataclass, field, replace
from typing import Any

FRAME_VERSION = 1
FRAME_LEN = 26
_FRAME_HEAD = struct.Struct(">BQIQhB")  # 24 bytes, CRC follows
_CRC = struct.Struct(">H")

MAX_MESSAGE_BYTES = 16 * 1024 * 1024
_LEN = struct.Struct(">I")

MSG_TYPES = frozenset({
    "ENROLL", "ENROLL_ACK", "OFFER_PUBLISH", "CATALOG_QUERY", "CATALOG_RESULT",
    "CONTRACT_REQUEST", "CONTRACT_DECISION", "CONTRACT_COUNTERSIGN",
    "DATA_REQUEST", "DATA_RESPONSE", "ERROR",
    # gateway -> provider link only
    "INGEST_BATCH", "INGEST_ACK",
})


class WireError(ValueError):
    pass


class RangeError(WireError):
    pass


class FrameMalformed(WireError):
    pass


class FrameCorrupt(WireError):
    pass


# --------------------------------------------------------------------------- CRC

def _make_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return table


_CRC_TABLE = _make_crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


# ------------------------------------------------------------------------ frames

@dataclass(frozen=True)
class UplinkFrame:
    device_id: int
    frame_counter: int
    timestamp_s: int
    temperature_cdeg: int
    battery_pct: int = 100
    version: int = FRAME_VERSION
    crc: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "version": self.version,
            "device_id": self.device_id,
            "frame_counter": self.frame_counter,
            "timestamp_s": self.timestamp_s,
            "temperature_cdeg": self.temperature_cdeg,
            "battery_pct": self.battery_pct,
            "crc": self.crc,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UplinkFrame":
        return cls(
            device_id=int(d["device_id"]),
            frame_counter=int(d["frame_counter"]),
            timestamp_s=int(d["timestamp_s"]),
            temperature_cdeg=int(d["temperature_cdeg"]),
            battery_pct=int(d["battery_pct"]),
            version=int(d.get("version", FRAME_VERSION)),
            crc=int(d.get("crc", 0)),
        )


def _check_ranges(frame: UplinkFrame, exc: type[WireError]) -> None:
    if frame.version != FRAME_VERSION:
        raise exc(f"unsupported frame version {frame.version}")
    if not 0 <= frame.battery_pct <= 100:
        raise exc(f"battery_pct out of range: {frame.battery_pct}")
    if not 0 <= frame.device_id < 2**64:
        raise exc("device_id out of range")
    if not 0 <= frame.frame_counter < 2**32:
        raise exc("frame_counter out of range")
    if not 0 <= frame.timestamp_s < 2**64:
        raise exc("timestamp_s out of range")
    if not -(2**15) <= frame.temperature_cdeg < 2**15:
        raise exc("temperature_cdeg out of range")


def encode_frame(frame: UplinkFrame) -> bytes:
    """Serialize ``frame``; the ``crc`` field of the input is ignored."""
    _check_ranges(frame, RangeError)
    head = _FRAME_HEAD.pack(
        frame.version, frame.device_id, frame.frame_counter,
        frame.timestamp_s, frame.temperature_cdeg, frame.battery_pct,
    )
    return head + _CRC.pack(crc16_ccitt_false(head))


def decode_frame(buf: bytes) -> UplinkFrame:
    if len(buf) != FRAME_LEN:
        raise FrameMalformed(f"frame must be {FRAME_LEN} bytes, got {len(buf)}")
    buf = bytes(buf)
    (crc,) = _CRC.unpack_from(buf, 24)
    if crc16_ccitt_false(buf[:24]) != crc:
        raise FrameCorrupt("CRC mismatch")
    version, dev, ctr, ts, temp, batt = _FRAME_HEAD.unpack_from(buf, 0)
    frame = UplinkFrame(dev, ctr, ts, temp, batt, version, crc)
    _check_ranges(frame, FrameMalformed)
    return frame


def with_crc(frame: UplinkFrame) -> UplinkFrame:
    """Return ``frame`` with its crc field filled in."""
    return decode_frame(encode_frame(frame))


# ------------------------------------------------------------- ingestion batches

@dataclass(frozen=True)
class AnnotatedFrame:
    frame: UplinkFrame
    rssi_dbm: int


@dataclass(frozen=True)
class IngestionBatch:
    gateway_id: str
    received_at_s: int
    frames: tuple[AnnotatedFrame, ...]

    def to_body(self) -> dict[str, Any]:
        return {
            "gateway_id": self.gateway_id,
            "received_at_s": self.received_at_s,
            "frames": [dict(a.frame.to_dict(), rssi_dbm=a.rssi_dbm) for a in self.frames],
        }

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "IngestionBatch":
        try:
            frames = tuple(
                AnnotatedFrame(UplinkFrame.from_dict(f), int(f["rssi_dbm"]))
                for f in body["frames"]
            )
            batch = cls(str(body["gateway_id"]), int(body["received_at_s"]), frames)
        except (KeyError, TypeError, ValueError) as e:
            raise WireError(f"malformed ingestion batch: {e}") from e
        if not batch.frames:
            raise WireError("ingestion batch has no frames")
        for a in batch.frames:
            # re-derive the CRC so a tampered decoded field cannot slip through
            if with_crc(a.frame).crc != a.frame.crc:
                raise WireError(f"frame crc mismatch for device {a.frame.device_id}")
        return batch


# --------------------------------------------------------------------- envelopes

def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


@dataclass(frozen=True)
class Envelope:
    msg_id: str
    sender_id: str
    msg_type: str
    body: dict[str, Any] = field(default_factory=dict)
    signature: str = ""

    def unsigned_dict(self) -> dict[str, Any]:
        return {"msg_id": self.msg_id, "sender_id": self.sender_id,
                "msg_type": self.msg_type, "body": self.body}

    def to_dict(self) -> dict[str, Any]:
        return dict(self.unsigned_dict(), signature=self.signature)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Envelope":
        if not isinstance(d, dict):
            raise WireError("envelope must be an object")
        try:
            env = cls(str(d["msg_id"]), str(d["sender_id"]), str(d["msg_type"]),
                      d["body"], str(d.get("signature", "")))
        except KeyError as e:
            raise WireError(f"envelope missing {e}") from e
        if env.msg_type not in MSG_TYPES:
            raise WireError(f"unknown msg_type {env.msg_type!r}")
        if not isinstance(env.body, dict):
            raise WireError("envelope body must be an object")
        return env


def canonical_bytes(env: Envelope) -> bytes:
    return canonical_json(env.unsigned_dict())


def new_msg_id(rng: random.Random) -> str:
    return f"{rng.getrandbits(128):032x}"


def make_envelope(sender_id: str, msg_type: str, body: dict[str, Any],
                  rng: random.Random) -> Envelope:
    if msg_type not in MSG_TYPES:
        raise WireError(f"unknown msg_type {msg_type!r}")
    return Envelope(new_msg_id(rng), sender_id, msg_type, body)


def hmac_sha256_hex(key: bytes, msg: bytes) -> str:
    return hmac.new(key, msg, hashlib.sha256).hexdigest()


def sign_envelope(env: Envelope, key: bytes) -> Envelope:
    if not key:
        raise ValueError("signing key must be non-empty")
    sig = hmac_sha256_hex(key, canonical_bytes(env))
    return replace(env, signature=sig)


def verify_envelope(env: Envelope, key: bytes) -> bool:
    if not key or not env.signature:
        return False
    try:
        expected = hmac_sha256_hex(key, canonical_bytes(env))
    except (TypeError, ValueError):
        return False
    return hmac.compare_digest(expected, env.signature)


# --------------------------------------------------------------- stream framing

def pack_message(env: Envelope) -> bytes:
    payload = canonical_json(env.to_dict())
    if len(payload) > MAX_MESSAGE_BYTES:
        raise WireError("message too large")
    return _LEN.pack(len(payload)) + payload


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf.extend(chunk)
    return bytes(buf)


def send_message(sock, env: Envelope) -> None:
    sock.sendall(pack_message(env))


def recv_message(sock) -> Envelope:
    (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if n > MAX_MESSAGE_BYTES:
        raise WireError(f"message length {n} exceeds limit")
    try:
        doc = json.loads(_recv_exact(sock, n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WireError(f"undecodable message: {e}") from e
    return Envelope.from_dict(doc)
