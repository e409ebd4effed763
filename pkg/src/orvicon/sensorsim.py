"""Deterministic field-of-sensors simulator.

Temperatures follow a diurnal cosine plus scripted radiation-frost events in
which low cells cool faster (cold pooling). Noise is counter-based: each
(seed, cell, t) triple hashes to its own normal deviate, so results never
depend on evaluation order.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

from .geo import cell_center, project
from .wire import UplinkFrame, encode_frame

SECONDS_PER_DAY = 86400
_KEY = struct.Struct(">QQQq")


class CellOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class Climate:
    t_mean_c: float
    diurnal_amp_c: float = 0.0
    t_peak_s: int = 14 * 3600
    noise_sigma_c: float = 0.0

    def __post_init__(self):
        if self.diurnal_amp_c < 0 or self.noise_sigma_c < 0:
            raise ValueError("diurnal_amp_c and noise_sigma_c must be >= 0")


@dataclass(frozen=True)
class FrostEvent:
    start_s: int
    end_s: int
    cooling_rate_c_per_h: float
    pooling_gain: float = 0.0

    def __post_init__(self):
        if self.start_s >= self.end_s:
            raise ValueError("frost event must have start_s < end_s")
        if self.cooling_rate_c_per_h < 0 or self.pooling_gain < 0:
            raise ValueError("cooling rate and pooling gain must be >= 0")


@dataclass(frozen=True)
class FieldModel:
    rows: int
    cols: int
    cell_size_m: float
    origin: tuple[float, float]
    elevation_m: tuple[tuple[float, ...], ...]
    climate: Climate
    frost_events: tuple[FrostEvent, ...] = ()
    field_id: str = "field-1"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if len(self.elevation_m) != self.rows or any(len(r) != self.cols for r in self.elevation_m):
            raise ValueError("elevation grid shape does not match rows x cols")
        flat = [e for row in self.elevation_m for e in row]
        object.__setattr__(self, "_emin", min(flat))
        object.__setattr__(self, "_emax", max(flat))

    @classmethod
    def with_plane(cls, rows, cols, cell_size_m, origin, climate, *, base_m=0.0,
                   gradient_row_m=0.0, gradient_col_m=0.0, frost_events=(),
                   field_id="field-1") -> "FieldModel":
        elev = tuple(tuple(base_m + gradient_row_m * r + gradient_col_m * c for c in range(cols))
                     for r in range(rows))
        return cls(rows, cols, cell_size_m, tuple(origin), elev, climate,
                   tuple(frost_events), field_id)

    def check_cell(self, cell: tuple[int, int]) -> None:
        r, c = cell
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise CellOutOfRange(f"cell {cell} outside {self.rows}x{self.cols} grid")

    def elevation(self, cell: tuple[int, int]) -> float:
        self.check_cell(cell)
        return self.elevation_m[cell[0]][cell[1]]

    @property
    def elev_min(self) -> float:
        return self._emin

    @property
    def elev_max(self) -> float:
        return self._emax

    def cell_latlon(self, cell: tuple[int, int]) -> tuple[float, float]:
        self.check_cell(cell)
        return cell_center(self.origin, self.cell_size_m, *cell)


@dataclass
class SimSensor:
    device_id: int
    cell: tuple[int, int]
    report_period_s: int = 600
    next_counter: int = 1
    battery_pct: int = 100
    phase_s: int = 0  # first report instant

    def __post_init__(self):
        if self.report_period_s <= 0:
            raise ValueError("report_period_s must be > 0")


@dataclass
class Scenario:
    """What the emitter needs: a field, its sensors, and replay behaviour."""
    model: FieldModel
    sensors: list[SimSensor]
    seed: int = 0
    duplicate_fraction: float = 0.0
    replay_delay_s: int = 1

    def __post_init__(self):
        ids = [s.device_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor device_ids must be unique")
        for s in self.sensors:
            self.model.check_cell(s.cell)
        if not 0.0 <= self.duplicate_fraction <= 1.0:
            raise ValueError("duplicate_fraction must be in [0, 1]")


# ----------------------------------------------------------------------- noise

def _hash_uniforms(seed: int, a: int, b: int, tag: int) -> tuple[float, float]:
    digest = hashlib.sha256(_KEY.pack(seed % 2**64, a % 2**64, tag, b)).digest()
    u1 = (int.from_bytes(digest[:8], "big") + 0.5) / 2**64
    u2 = (int.from_bytes(digest[8:16], "big") + 0.5) / 2**64
    return u1, u2


def counter_normal(seed: int, cell_index: int, t: int) -> float:
    """Standard normal deviate keyed by (seed, cell_index, t); Box-Muller."""
    u1, u2 = _hash_uniforms(seed, cell_index, t, 0)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def counter_uniform(seed: int, key: int, t: int) -> float:
    return _hash_uniforms(seed, key, t, 1)[0]


# ------------------------------------------------------------------ temperature

def frost_offset(model: FieldModel, cell: tuple[int, int], t: int) -> float:
    elev = model.elevation(cell)
    erange = model.elev_max - model.elev_min
    total = 0.0
    for ev in model.frost_events:
        if not ev.start_s <= t <= ev.end_s:
            continue
        hours = (min(t, ev.end_s) - ev.start_s) / 3600.0
        pooling = 1.0 + ev.pooling_gain * (model.elev_max - elev) / max(1.0, erange)
        total -= ev.cooling_rate_c_per_h * hours * pooling
    return total


def true_temperature(model: FieldModel, cell: tuple[int, int], t: int, rng_seed: int = 0) -> float:
    model.check_cell(cell)
    cl = model.climate
    sod = t % SECONDS_PER_DAY
    temp = cl.t_mean_c + cl.diurnal_amp_c * math.sin(
        2.0 * math.pi * (sod - cl.t_peak_s) / SECONDS_PER_DAY + math.pi / 2.0)
    temp += frost_offset(model, cell, t)
    if cl.noise_sigma_c > 0:
        cell_index = cell[0] * model.cols + cell[1]
        temp += cl.noise_sigma_c * counter_normal(rng_seed, cell_index, t)
    return temp


def quantize_cdeg(temp_c: float) -> int:
    return int(round(100.0 * temp_c))


# --------------------------------------------------------------------- emission

@dataclass(frozen=True, order=True)
class Emission:
    t: int
    device_id: int
    replay: bool = False
    frame: UplinkFrame = field(compare=False, default=None)

    @property
    def payload(self) -> bytes:
        return encode_frame(self.frame)


def _report_times(sensor: SimSensor, t0: int, t1: int):
    """Yield (k, t) for report instants phase + k*period inside [t0, t1]."""
    p = sensor.report_period_s
    k = max(0, -(-(t0 - sensor.phase_s) // p))
    while True:
        t = sensor.phase_s + k * p
        if t > t1:
            return
        yield k, t
        k += 1


def emission_schedule(scenario: Scenario, horizon: tuple[int, int]) -> list[Emission]:
    """All frames due in the inclusive ``horizon``, ordered by (t, device_id).

    With ``duplicate_fraction`` > 0 a deterministic subset of frames is sent a
    second time ``replay_delay_s`` later, byte-identical, flagged ``replay``.
    """
    t0, t1 = horizon
    if t0 >= t1:
        raise ValueError("horizon must satisfy t0 < t1")
    out: list[Emission] = []
    for s in scenario.sensors:
        for k, t in _report_times(s, t0, t1):
            temp = true_temperature(scenario.model, s.cell, t, scenario.seed)
            frame = UplinkFrame(
                device_id=s.device_id,
                frame_counter=(s.next_counter + k) % 2**32,
                timestamp_s=t,
                temperature_cdeg=quantize_cdeg(temp),
                battery_pct=s.battery_pct,
            )
            out.append(Emission(t, s.device_id, False, frame))
            if scenario.duplicate_fraction > 0 and (
                    counter_uniform(scenario.seed, s.device_id, frame.frame_counter)
                    < scenario.duplicate_fraction):
                out.append(Emission(t + scenario.replay_delay_s, s.device_id, True, frame))
    out.sort()
    return out


def sensor_position(model: FieldModel, sensor: SimSensor) -> tuple[float, float]:
    return model.cell_latlon(sensor.cell)


def distance_m(origin: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> float:
    ax, ay = project(origin, *a)
    bx, by = project(origin, *b)
    return math.hypot(ax - bx, ay - by)
