"""LoRa-style gateway: replay filtering, simulated RSSI, batched backhaul."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .wire import (AnnotatedFrame, FrameCorrupt, FrameMalformed, IngestionBatch,
                   UplinkFrame, decode_frame)

FLUSH_MAX_FRAMES = 32
FLUSH_MAX_AGE_S = 5
RSSI_MIN, RSSI_MAX = -130, -30


class EmptyBatch(RuntimeError):
    pass


@dataclass(frozen=True)
class Accepted:
    frame: UplinkFrame


@dataclass(frozen=True)
class Dropped:
    frame: UplinkFrame | None
    reason: str  # replay | stale | corrupt | malformed


@dataclass
class DedupState:
    last_counter: dict[int, int] = field(default_factory=dict)


def accept_frame(state: DedupState, frame: UplinkFrame) -> Accepted | Dropped:
    last = state.last_counter.get(frame.device_id)
    if last is not None:
        if frame.frame_counter == last:
            return Dropped(frame, "replay")
        if frame.frame_counter < last:
            return Dropped(frame, "stale")
    state.last_counter[frame.device_id] = frame.frame_counter
    return Accepted(frame)


def path_loss_rssi(distance_m: float) -> int:
    rssi = -60 - round(20.0 * math.log10(max(1.0, distance_m) / 10.0))
    return int(min(RSSI_MAX, max(RSSI_MIN, rssi)))


def flush_batch(state: DedupState, pending: list[AnnotatedFrame], gateway_id: str,
                now: int) -> IngestionBatch:
    if not pending:
        raise EmptyBatch("nothing pending")
    batch = IngestionBatch(gateway_id, now, tuple(pending))
    pending.clear()
    return batch


class Gateway:
    """Sequential ingress; FIFO handoff of accepted frames to the backhaul."""

    def __init__(self, gateway_id: str, distance_of: Callable[[int], float]):
        self.gateway_id = gateway_id
        self.distance_of = distance_of
        self.state = DedupState()
        self.pending: list[AnnotatedFrame] = []
        self.first_pending_at: int | None = None
        self.stats = {"received": 0, "accepted": 0, "replay": 0, "stale": 0,
                      "corrupt": 0, "malformed": 0, "batches": 0}

    def receive(self, payload: bytes, now: int) -> Accepted | Dropped:
        self.stats["received"] += 1
        try:
            frame = decode_frame(payload)
        except FrameCorrupt:
            self.stats["corrupt"] += 1
            return Dropped(None, "corrupt")
        except FrameMalformed:
            self.stats["malformed"] += 1
            return Dropped(None, "malformed")
        result = accept_frame(self.state, frame)
        if isinstance(result, Dropped):
            self.stats[result.reason] += 1
            return result
        self.stats["accepted"] += 1
        rssi = path_loss_rssi(self.distance_of(frame.device_id))
        if not self.pending:
            self.first_pending_at = now
        self.pending.append(AnnotatedFrame(frame, rssi))
        return result

    def due(self, now: int) -> bool:
        if not self.pending:
            return False
        return (len(self.pending) >= FLUSH_MAX_FRAMES
                or now - self.first_pending_at >= FLUSH_MAX_AGE_S)

    def flush(self, now: int) -> IngestionBatch:
        batch = flush_batch(self.state, self.pending, self.gateway_id, now)
        self.first_pending_at = None
        self.stats["batches"] += 1
        return batch

    def poll(self, now: int, force: bool = False) -> list[IngestionBatch]:
        """Flush if the batching policy says so (or ``force`` with anything pending)."""
        out = []
        while self.pending and (force or self.due(now)):
            if len(self.pending) > FLUSH_MAX_FRAMES:
                head = self.pending[:FLUSH_MAX_FRAMES]
                del self.pending[:FLUSH_MAX_FRAMES]
                out.append(IngestionBatch(self.gateway_id, now, tuple(head)))
                self.stats["batches"] += 1
                continue
            out.append(self.flush(now))
        return out
