"""Consumer-side frost analytics on a field grid."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .geo import cell_center, project


class NoReadings(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_size_m: float
    origin: tuple[float, float]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs rows, cols >= 1")

    def cell_xy(self, row: int, col: int) -> tuple[float, float]:
        return col * self.cell_size_m, row * self.cell_size_m

    def cell_latlon(self, row: int, col: int) -> tuple[float, float]:
        return cell_center(self.origin, self.cell_size_m, row, col)

    def to_xy(self, lat: float, lon: float) -> tuple[float, float]:
        return project(self.origin, lat, lon)


@dataclass(frozen=True)
class FrostConfig:
    critical_temp_c: float
    idw_power: float = 2.0
    snap_epsilon_m: float = 0.5
    trend_window: int = 6

    def __post_init__(self):
        if self.idw_power <= 0:
            raise ValueError("idw_power must be > 0")
        if self.trend_window < 2:
            raise ValueError("trend_window must be >= 2")


@dataclass(frozen=True)
class Reading:
    """One sensor's value at a planar position (metres, grid frame)."""
    x: float
    y: float
    temp_c: float
    device_id: int = 0


@dataclass(frozen=True)
class MitigationZone:
    zone_id: int
    cells: tuple[tuple[int, int], ...]
    bbox: tuple[int, int, int, int]  # row_min, col_min, row_max, col_max
    min_temp_c: float

    def to_dict(self) -> dict:
        return {"zone_id": self.zone_id, "cells": [list(c) for c in self.cells],
                "bbox": list(self.bbox), "min_temp_c": self.min_temp_c}


@dataclass(frozen=True)
class FrostAlert:
    at: int
    zones: tuple[MitigationZone, ...]
    min_temp_c: float
    coverage_fraction: float
    eta_s: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"at": self.at, "zones": [z.to_dict() for z in self.zones],
                "min_temp_c": self.min_temp_c, "coverage_fraction": self.coverage_fraction,
                "eta_s": {str(k): v for k, v in sorted(self.eta_s.items())}}


def idw_interpolate(query: tuple[float, float], readings: Sequence[Reading], cfg: FrostConfig) -> float:
    """Inverse-distance weighted value at ``query`` (x, y in metres).

    Readings closer than ``cfg.snap_epsilon_m`` short-circuit: the nearest one
    wins, ties going to the lowest device_id.
    """
    if not readings:
        raise NoReadings("no readings to interpolate")
    qx, qy = query
    dists = [math.hypot(r.x - qx, r.y - qy) for r in readings]
    snap = [(d, r.device_id, r.temp_c) for d, r in zip(dists, readings) if d < cfg.snap_epsilon_m]
    if snap:
        return min(snap)[2]
    num = 0.0
    den = 0.0
    for d, r in zip(dists, readings):
        w = d ** -cfg.idw_power
        num += w * r.temp_c
        den += w
    return num / den


def field_snapshot(grid: GridSpec, readings: Sequence[Reading], cfg: FrostConfig) -> np.ndarray:
    if not readings:
        raise NoReadings("no readings for snapshot")
    out = np.empty((grid.rows, grid.cols), dtype=float)
    for r in range(grid.rows):
        for c in range(grid.cols):
            out[r, c] = idw_interpolate(grid.cell_xy(r, c), readings, cfg)
    return out


def detect_zones(snapshot: np.ndarray, threshold: float) -> list[MitigationZone]:
    cold = np.asarray(snapshot) <= threshold
    labels, n = ndimage.label(cold)  # default structure is 4-connected
    zones = []
    for lab in range(1, n + 1):
        rr, cc = np.nonzero(labels == lab)
        cells = tuple(sorted(zip(rr.tolist(), cc.tolist())))
        zones.append((cells, float(snapshot[rr, cc].min())))
    zones.sort(key=lambda z: z[0][0])
    return [MitigationZone(i + 1, cells,
                           (min(r for r, _ in cells), min(c for _, c in cells),
                            max(r for r, _ in cells), max(c for _, c in cells)), tmin)
            for i, (cells, tmin) in enumerate(zones)]


def cooling_eta(readings: Sequence[tuple[int, float]], threshold: float,
                trend_window: int = 6) -> float | None:
    """Seconds after the last reading until a least-squares trend hits ``threshold``.

    0.0 if already at or below it; None if the trend is flat or warming.
    """
    pts = sorted(readings)[-trend_window:]
    if len(pts) < 2:
        raise InsufficientData("need at least two readings")
    t_last, temp_last = pts[-1]
    if temp_last <= threshold:
        return 0.0
    n = len(pts)
    mt = sum(t for t, _ in pts) / n
    my = sum(y for _, y in pts) / n
    sxx = sum((t - mt) ** 2 for t, _ in pts)
    if sxx == 0:
        raise InsufficientData("readings share one timestamp")
    slope = sum((t - mt) * (y - my) for t, y in pts) / sxx
    if slope >= 0:
        return None
    return (threshold - temp_last) / slope


def latest_readings(grid: GridSpec, records: Iterable, at: int) -> list[Reading]:
    """Each device's most recent record with timestamp <= at, in device order."""
    latest: dict[int, object] = {}
    for rec in records:
        if rec.timestamp_s > at:
            continue
        cur = latest.get(rec.device_id)
        if cur is None or (rec.timestamp_s, rec.frame_counter) > (cur.timestamp_s, cur.frame_counter):
            latest[rec.device_id] = rec
    out = []
    for dev in sorted(latest):
        rec = latest[dev]
        x, y = grid.to_xy(rec.lat, rec.lon)
        out.append(Reading(x, y, rec.temperature_c, dev))
    return out


def build_alert(grid: GridSpec, records: Sequence, cfg: FrostConfig, at: int) -> FrostAlert | None:
    readings = latest_readings(grid, records, at)
    snap = field_snapshot(grid, readings, cfg)
    zones = detect_zones(snap, cfg.critical_temp_c)
    if not zones:
        return None
    series: dict[int, list[tuple[int, float]]] = {}
    for rec in records:
        if rec.timestamp_s <= at:
            series.setdefault(rec.device_id, []).append((rec.timestamp_s, rec.temperature_c))
    etas = {}
    for dev, pts in sorted(series.items()):
        try:
            etas[dev] = cooling_eta(pts, cfg.critical_temp_c, cfg.trend_window)
        except InsufficientData:
            etas[dev] = None
    n_cold = sum(len(z.cells) for z in zones)
    return FrostAlert(at, tuple(zones), float(snap.min()), n_cold / snap.size, etas)


def snapshot_csv(snapshot: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("row,col,temp_c\n")
    for (r, c), v in np.ndenumerate(snapshot):
        buf.write(f"{r},{c},{v:.4f}\n")
    return buf.getvalue()


def render_zones(snapshot: np.ndarray, zones: Sequence[MitigationZone]) -> str:
    """Character map, north row on top: '.' warm, zone cells by id (1-9, then letters)."""
    glyphs = "123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows, cols = np.shape(snapshot)
    canvas = [["." for _ in range(cols)] for _ in range(rows)]
    for z in zones:
        g = glyphs[(z.zone_id - 1) % len(glyphs)]
        for r, c in z.cells:
            canvas[r][c] = g
    return "\n".join("".join(line) for line in reversed(canvas))
