"""Provider service: GPS enrichment, append-only record store, dataset catalog.

Store directory layout::

    registry.json             sensor registrations (JSON, sorted keys)
    datasets/<dataset_id>.log one log per field_id
    quarantine.log            frames from unregistered devices

Every ``.log`` starts with the 6-byte header ``b"ORVS" + u16 version`` and is
followed by fixed-width 88-byte big-endian records::

    device_id u64 | frame_counter u32 | timestamp_s u64 | temperature_cdeg i16
    | lat f64 | lon f64 | elevation_m f64 | rssi_dbm i16 | ingest_seq u64
    | gateway_id 32 bytes (UTF-8, NUL padded)

A trailing partial record (torn write) is ignored when the index is rebuilt.
Quarantined records carry NaN coordinates.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import struct
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

from .wire import Envelope, IngestionBatch, WireError, verify_envelope

MAGIC = b"ORVS"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">4sH")
_RECORD = struct.Struct(">QIQhdddhQ32s")
RECORD_SIZE = _RECORD.size
_DATASET_ID = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


class ProviderError(Exception):
    pass


class DuplicateDevice(ProviderError):
    pass


class UnknownDataset(ProviderError):
    pass


class InvalidWindow(ProviderError):
    pass


class BadSignature(ProviderError):
    pass


class MalformedBatch(ProviderError):
    pass


class StoreCorrupt(ProviderError):
    pass


@dataclass(frozen=True)
class SensorRegistration:
    device_id: int
    lat: float
    lon: float
    elevation_m: float
    label: str = ""
    field_id: str = "field-1"

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"invalid coordinates ({self.lat}, {self.lon})")
        if not _DATASET_ID.match(self.field_id):
            raise ValueError(f"invalid field_id {self.field_id!r}")


@dataclass(frozen=True)
class SensorRecord:
    device_id: int
    frame_counter: int
    timestamp_s: int
    temperature_c: float
    lat: float
    lon: float
    elevation_m: float
    gateway_id: str
    rssi_dbm: int
    ingest_seq: int

    @property
    def identity(self) -> tuple[int, int]:
        return (self.device_id, self.frame_counter)

    def content(self) -> tuple:
        """Everything except ingest_seq."""
        d = asdict(self)
        d.pop("ingest_seq")
        return tuple(d.values())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    field_id: str
    description: str
    coverage: tuple[int, int] | None
    record_count: int

    def to_dict(self) -> dict:
        return {"dataset_id": self.dataset_id, "field_id": self.field_id,
                "description": self.description,
                "coverage": list(self.coverage) if self.coverage else None,
                "record_count": self.record_count}


def pack_record(rec: SensorRecord) -> bytes:
    gw = rec.gateway_id.encode("utf-8")
    if len(gw) > 32:
        raise MalformedBatch(f"gateway_id longer than 32 bytes: {rec.gateway_id!r}")
    return _RECORD.pack(rec.device_id, rec.frame_counter, rec.timestamp_s,
                        int(round(rec.temperature_c * 100)), rec.lat, rec.lon,
                        rec.elevation_m, rec.rssi_dbm, rec.ingest_seq, gw)


def unpack_record(buf: bytes, offset: int = 0) -> SensorRecord:
    dev, ctr, ts, cdeg, lat, lon, elev, rssi, seq, gw = _RECORD.unpack_from(buf, offset)
    return SensorRecord(dev, ctr, ts, cdeg / 100.0, lat, lon, elev,
                        gw.rstrip(b"\x00").decode("utf-8"), rssi, seq)


def read_log(data: bytes) -> list[SensorRecord]:
    if len(data) < _HEADER.size:
        raise StoreCorrupt("log shorter than header")
    magic, version = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise StoreCorrupt(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StoreCorrupt(f"unsupported store format version {version}")
    body = len(data) - _HEADER.size
    n = body // RECORD_SIZE
    return [unpack_record(data, _HEADER.size + i * RECORD_SIZE) for i in range(n)]


def log_header() -> bytes:
    return _HEADER.pack(MAGIC, FORMAT_VERSION)


class _Log:
    """Append-only binary log backed by a file, or by memory when path is None."""

    def __init__(self, path: Path | None):
        self.path = path
        self._mem = io.BytesIO()
        if path is None:
            self._mem.write(log_header())
        elif not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as f:
                f.write(log_header())

    def read(self) -> list[SensorRecord]:
        if self.path is None:
            return read_log(self._mem.getvalue())
        return read_log(self.path.read_bytes())

    def append(self, recs: list[SensorRecord]) -> None:
        blob = b"".join(pack_record(r) for r in recs)
        if self.path is None:
            self._mem.write(blob)
            return
        with open(self.path, "ab") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())

    def rewrite(self, recs: list[SensorRecord]) -> None:
        blob = log_header() + b"".join(pack_record(r) for r in recs)
        if self.path is None:
            self._mem = io.BytesIO()
            self._mem.write(blob)
            return
        tmp = self.path.with_suffix(".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, self.path)


class ProviderStore:
    """Registrations, per-dataset record logs and the in-memory index.

    Mutations go through one lock (single writer); queries copy out of the
    index under the same lock so they see whole batches only.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self.dir = Path(directory) if directory is not None else None
        self._lock = threading.RLock()
        self.registry: dict[int, SensorRegistration] = {}
        self.descriptions: dict[str, str] = {}
        self._logs: dict[str, _Log] = {}
        self._records: dict[str, list[SensorRecord]] = {}
        self._identities: set[tuple[int, int]] = set()
        self._quarantine_log = _Log(self.dir / "quarantine.log" if self.dir else None)
        self._quarantine: list[SensorRecord] = []
        self._q_identities: set[tuple[int, int]] = set()
        self._next_seq = 1
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # ---------------------------------------------------------------- startup
    def _registry_path(self) -> Path:
        return self.dir / "registry.json"

    def _load(self) -> None:
        reg_path = self._registry_path()
        if reg_path.exists():
            doc = json.loads(reg_path.read_text("utf-8"))
            for r in doc.get("sensors", []):
                reg = SensorRegistration(**r)
                self.registry[reg.device_id] = reg
            self.descriptions.update(doc.get("descriptions", {}))
        for fid in sorted({r.field_id for r in self.registry.values()}):
            self._dataset_log(fid)
        ds_dir = self.dir / "datasets"
        if ds_dir.exists():
            for p in sorted(ds_dir.glob("*.log")):
                self._dataset_log(p.stem)
        for dsid, log in self._logs.items():
            recs = log.read()
            self._records[dsid] = recs
            for r in recs:
                self._identities.add(r.identity)
                self._next_seq = max(self._next_seq, r.ingest_seq + 1)
        self._quarantine = self._quarantine_log.read()
        for r in self._quarantine:
            self._q_identities.add(r.identity)
            self._next_seq = max(self._next_seq, r.ingest_seq + 1)

    def _save_registry(self) -> None:
        if self.dir is None:
            return
        doc = {"sensors": [asdict(r) for _, r in sorted(self.registry.items())],
               "descriptions": self.descriptions}
        tmp = self._registry_path().with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True, indent=1), "utf-8")
        os.replace(tmp, self._registry_path())

    def _dataset_log(self, dataset_id: str) -> _Log:
        if dataset_id not in self._logs:
            path = self.dir / "datasets" / f"{dataset_id}.log" if self.dir else None
            self._logs[dataset_id] = _Log(path)
            self._records.setdefault(dataset_id, [])
        return self._logs[dataset_id]

    # ------------------------------------------------------------ operations
    def register_sensor(self, reg: SensorRegistration, description: str | None = None) -> str:
        with self._lock:
            existing = self.registry.get(reg.device_id)
            if existing is not None:
                if existing != reg:
                    raise DuplicateDevice(f"device {reg.device_id} already registered differently")
                return "unchanged"
            self.registry[reg.device_id] = reg
            self._dataset_log(reg.field_id)
            if description is not None:
                self.descriptions[reg.field_id] = description
            self._save_registry()
            return "registered"

    def ingest(self, batch: IngestionBatch) -> dict[str, int]:
        stored: dict[str, list[SensorRecord]] = {}
        quarantined: list[SensorRecord] = []
        dups = 0
        if len(batch.gateway_id.encode("utf-8")) > 32:
            raise MalformedBatch("gateway_id longer than 32 bytes")
        with self._lock:
            seen = set()
            seq = self._next_seq
            for a in batch.frames:
                f = a.frame
                ident = (f.device_id, f.frame_counter)
                if ident in self._identities or ident in self._q_identities or ident in seen:
                    dups += 1
                    continue
                seen.add(ident)
                reg = self.registry.get(f.device_id)
                nan = float("nan")
                rec = SensorRecord(
                    f.device_id, f.frame_counter, f.timestamp_s, f.temperature_cdeg / 100.0,
                    reg.lat if reg else nan, reg.lon if reg else nan,
                    reg.elevation_m if reg else nan, batch.gateway_id, a.rssi_dbm, seq)
                seq += 1
                if reg is None:
                    quarantined.append(rec)
                else:
                    stored.setdefault(reg.field_id, []).append(rec)
            # all records built; now persist, then publish to the index
            for dsid, recs in stored.items():
                self._dataset_log(dsid).append(recs)
            if quarantined:
                self._quarantine_log.append(quarantined)
            for dsid, recs in stored.items():
                self._records[dsid].extend(recs)
                self._identities.update(r.identity for r in recs)
            self._quarantine.extend(quarantined)
            self._q_identities.update(r.identity for r in quarantined)
            self._next_seq = seq
        n_stored = sum(len(v) for v in stored.values())
        return {"stored": n_stored, "quarantined": len(quarantined), "duplicates": dups}

    def ingest_envelope(self, env: Envelope, key_for: Callable[[str], bytes | None]) -> dict[str, int]:
        if env.msg_type != "INGEST_BATCH":
            raise MalformedBatch(f"expected INGEST_BATCH, got {env.msg_type}")
        key = key_for(env.sender_id)
        if key is None or not verify_envelope(env, key):
            raise BadSignature(f"ingestion envelope from {env.sender_id!r} failed verification")
        try:
            batch = IngestionBatch.from_body(env.body)
        except WireError as e:
            raise MalformedBatch(str(e)) from e
        if batch.gateway_id != env.sender_id:
            raise MalformedBatch("batch gateway_id does not match envelope sender")
        return self.ingest(batch)

    def has_dataset(self, dataset_id: str) -> bool:
        with self._lock:
            return dataset_id in self._records

    def query_records(self, dataset_id: str, window: tuple[int, int],
                      devices: set[int] | None = None) -> list[SensorRecord]:
        a, b = window
        if a > b:
            raise InvalidWindow(f"window start {a} after end {b}")
        with self._lock:
            if dataset_id not in self._records:
                raise UnknownDataset(dataset_id)
            recs = [r for r in self._records[dataset_id]
                    if a <= r.timestamp_s <= b and (devices is None or r.device_id in devices)]
        recs.sort(key=lambda r: (r.timestamp_s, r.device_id, r.frame_counter))
        return recs

    def describe(self, dataset_id: str) -> DatasetDescriptor:
        with self._lock:
            if dataset_id not in self._records:
                raise UnknownDataset(dataset_id)
            recs = self._records[dataset_id]
            cov = (min(r.timestamp_s for r in recs), max(r.timestamp_s for r in recs)) if recs else None
            return DatasetDescriptor(dataset_id, dataset_id, self.descriptions.get(dataset_id, ""),
                                     cov, len(recs))

    def list_datasets(self) -> list[DatasetDescriptor]:
        with self._lock:
            ids = sorted(self._records)
        return [self.describe(d) for d in ids]

    def quarantined(self) -> list[SensorRecord]:
        with self._lock:
            return list(self._quarantine)

    def reconcile_quarantine(self) -> dict[str, int]:
        """Move quarantined records of now-registered devices into their datasets."""
        with self._lock:
            moved: dict[str, list[SensorRecord]] = {}
            keep: list[SensorRecord] = []
            dups = 0
            for r in self._quarantine:
                reg = self.registry.get(r.device_id)
                if reg is None:
                    keep.append(r)
                    continue
                if r.identity in self._identities:
                    dups += 1
                    continue
                rec = SensorRecord(r.device_id, r.frame_counter, r.timestamp_s, r.temperature_c,
                                   reg.lat, reg.lon, reg.elevation_m, r.gateway_id, r.rssi_dbm,
                                   self._next_seq)
                self._next_seq += 1
                moved.setdefault(reg.field_id, []).append(rec)
                self._identities.add(rec.identity)
            for dsid, recs in moved.items():
                self._dataset_log(dsid).append(recs)
                self._records[dsid].extend(recs)
            self._quarantine_log.rewrite(keep)
            self._quarantine = keep
            self._q_identities = {r.identity for r in keep}
        return {"reconciled": sum(len(v) for v in moved.values()),
                "remaining": len(keep), "duplicates": dups}

    def all_records(self) -> list[SensorRecord]:
        with self._lock:
            recs = [r for rs in self._records.values() for r in rs]
        return sorted(recs, key=lambda r: (r.device_id, r.frame_counter))

    def content_digest(self) -> str:
        """SHA-256 over every stored record minus ingest_seq, in identity order."""
        h = hashlib.sha256()
        for r in self.all_records():
            h.update(repr(r.content()).encode("utf-8"))
        return h.hexdigest()


def inspect_store(directory: str | os.PathLike) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no store directory at {d}")
    store = ProviderStore(d)
    out = {"format_version": FORMAT_VERSION, "sensors": len(store.registry),
           "datasets": [ds.to_dict() for ds in store.list_datasets()],
           "quarantined": len(store.quarantined()),
           "next_ingest_seq": store._next_seq}
    for p in sorted((d / "datasets").glob("*.log")) if (d / "datasets").exists() else []:
        size = p.stat().st_size
        torn = (size - _HEADER.size) % RECORD_SIZE
        if torn:
            out.setdefault("torn_tails", {})[p.name] = torn
    return out


