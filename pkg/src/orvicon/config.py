"""Scenario configuration: JSON document, schema_version 1, unknown keys rejected."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from .dataspace import BBox, ConnectorCertificate, UsagePolicy
from .frost import FrostConfig, GridSpec
from .provider import SensorRegistration
from .sensorsim import Climate, FieldModel, FrostEvent, Scenario, SimSensor

SCHEMA_VERSION = 1


class ConfigInvalid(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


def _obj(props: dict, required: list[str] | None = None) -> dict:
    return {"type": "object", "properties": props, "required": required or [],
            "additionalProperties": False}


_INT = {"type": "integer"}
_NUM = {"type": "number"}
_STR = {"type": "string"}
_BOOL = {"type": "boolean"}
_PAIR_INT = {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2}
_BBOX = _obj({"lat_min": _NUM, "lat_max": _NUM, "lon_min": _NUM, "lon_max": _NUM},
             ["lat_min", "lat_max", "lon_min", "lon_max"])
_CERT = _obj({"cert_id": _STR, "connector_build_hash": _STR, "issued_by": _STR,
              "valid_until": _INT}, ["cert_id", "connector_build_hash", "issued_by", "valid_until"])
ACTIONS = ["enroll", "catalog", "request_contract", "accept", "reject", "revoke_contract",
           "countersign", "data_request", "revoke_member"]

SCHEMA: dict[str, Any] = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "name": _STR,
    "seed": _INT,
    "clock": _obj({"start_s": _INT, "end_s": _INT, "tick_s": {"type": "integer", "minimum": 1}},
                  ["start_s", "end_s"]),
    "field": _obj({
        "field_id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]{1,64}$"},
        "description": _STR,
        "rows": {"type": "integer", "minimum": 1},
        "cols": {"type": "integer", "minimum": 1},
        "cell_size_m": {"type": "number", "exclusiveMinimum": 0},
        "origin": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "elevation": {"oneOf": [
            _obj({"base_m": _NUM, "gradient_row_m": _NUM, "gradient_col_m": _NUM}),
            {"type": "array", "items": {"type": "array", "items": _NUM}},
        ]},
        "climate": _obj({"t_mean_c": _NUM, "diurnal_amp_c": {"type": "number", "minimum": 0},
                         "t_peak_s": _INT, "noise_sigma_c": {"type": "number", "minimum": 0}},
                        ["t_mean_c"]),
        "frost_events": {"type": "array", "items": _obj({
            "start_s": _INT, "end_s": _INT,
            "cooling_rate_c_per_h": {"type": "number", "minimum": 0},
            "pooling_gain": {"type": "number", "minimum": 0}},
            ["start_s", "end_s", "cooling_rate_c_per_h"])},
    }, ["field_id", "rows", "cols", "cell_size_m", "origin", "climate"]),
    "sensors": {"type": "array", "minItems": 1, "items": _obj({
        "device_id": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "cell": _PAIR_INT,
        "report_period_s": {"type": "integer", "minimum": 1},
        "phase_s": _INT,
        "next_counter": {"type": "integer", "minimum": 0, "maximum": 2**32 - 1},
        "battery_pct": {"type": "integer", "minimum": 0, "maximum": 100},
        "registered": _BOOL,
        "label": _STR}, ["device_id", "cell"])},
    "simulation": _obj({"duplicate_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                        "replay_delay_s": {"type": "integer", "minimum": 0}}),
    "gateway": _obj({"member_id": _STR, "lat": _NUM, "lon": _NUM}, ["member_id", "lat", "lon"]),
    "approved_certs": {"type": "array", "items": _STR},
    "members": {"type": "array", "items": _obj({
        "member_id": _STR, "display_name": _STR,
        "role": {"enum": ["provider", "consumer", "gateway"]},
        "certificate": _CERT,
        "enroll_at": {"type": ["integer", "null"]}}, ["member_id", "role", "certificate"])},
    "offers": {"type": "array", "items": _obj({
        "label": _STR, "provider": _STR, "dataset_id": _STR, "publish_at": _INT,
        "policy": _obj({"policy_id": _STR, "time_window": _PAIR_INT,
                        "max_requests_per_hour": {"type": "integer", "minimum": 1},
                        "expires_at": _INT, "spatial_scope": {"oneOf": [_BBOX, {"type": "null"}]},
                        "purpose": _STR},
                       ["policy_id", "time_window", "max_requests_per_hour", "expires_at"])},
        ["label", "provider", "dataset_id", "policy"])},
    "script": {"type": "array", "items": _obj({
        "at": _INT, "actor": _STR, "action": {"enum": ACTIONS},
        "offer": _STR, "contract": _STR, "as": _STR, "member": _STR,
        "window": _PAIR_INT, "window_s": {"type": "integer", "minimum": 0},
        "bbox": _BBOX, "forge": _BOOL, "analyze": _BOOL,
        "role": {"enum": ["provider", "consumer", "gateway"]}, "certificate": _CERT},
        ["at", "actor", "action"])},
    "frost": _obj({"critical_temp_c": _NUM, "idw_power": {"type": "number", "exclusiveMinimum": 0},
                   "snap_epsilon_m": {"type": "number", "minimum": 0},
                   "trend_window": {"type": "integer", "minimum": 2}}, ["critical_temp_c"]),
}, ["schema_version", "clock", "field", "sensors", "gateway", "members", "frost"])


@dataclass(frozen=True)
class MemberSpec:
    member_id: str
    display_name: str
    role: str
    certificate: ConnectorCertificate
    enroll_at: int | None


@dataclass(frozen=True)
class OfferSpec:
    label: str
    provider: str
    dataset_id: str
    publish_at: int
    policy: UsagePolicy


@dataclass(frozen=True)
class Action:
    at: int
    actor: str
    action: str
    params: dict[str, Any]


@dataclass
class ScenarioConfig:
    raw: dict[str, Any]
    name: str
    seed: int
    start_s: int
    end_s: int
    tick_s: int
    scenario: Scenario
    registrations: list[SensorRegistration]
    dataset_description: str
    gateway_id: str
    gateway_pos: tuple[float, float]
    approved_certs: list[str]
    members: list[MemberSpec]
    offers: list[OfferSpec]
    script: list[Action]
    frost: FrostConfig
    grid: GridSpec = field(init=False)

    def __post_init__(self):
        m = self.scenario.model
        self.grid = GridSpec(m.rows, m.cols, m.cell_size_m, m.origin)

    @property
    def model(self) -> FieldModel:
        return self.scenario.model

    def with_seed(self, seed: int) -> "ScenarioConfig":
        raw = dict(self.raw, seed=seed)
        return parse_config(raw)


def _path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


def validate_document(doc: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    return [f"{_path(e)}: {e.message}" for e in errs]


def parse_config(doc: dict[str, Any]) -> ScenarioConfig:
    diags = validate_document(doc)
    if diags:
        raise ConfigInvalid(diags)
    clock = doc["clock"]
    start, end = clock["start_s"], clock["end_s"]
    if start >= end:
        diags.append("clock: start_s must be < end_s")
    f = doc["field"]
    rows, cols = f["rows"], f["cols"]
    elev = f.get("elevation", {})
    if isinstance(elev, list):
        if len(elev) != rows or any(len(r) != cols for r in elev):
            diags.append(f"field.elevation: expected {rows}x{cols} grid")
            elev = {}
    events = []
    for i, ev in enumerate(f.get("frost_events", [])):
        if ev["start_s"] >= ev["end_s"]:
            diags.append(f"field.frost_events[{i}]: start_s must be < end_s")
            continue
        events.append(FrostEvent(ev["start_s"], ev["end_s"], ev["cooling_rate_c_per_h"],
                                 ev.get("pooling_gain", 0.0)))
    cl = f["climate"]
    climate = Climate(cl["t_mean_c"], cl.get("diurnal_amp_c", 0.0), cl.get("t_peak_s", 14 * 3600),
                      cl.get("noise_sigma_c", 0.0))
    origin = (float(f["origin"][0]), float(f["origin"][1]))
    if isinstance(elev, list):
        model = FieldModel(rows, cols, f["cell_size_m"], origin,
                           tuple(tuple(float(v) for v in r) for r in elev), climate,
                           tuple(events), f["field_id"])
    else:
        model = FieldModel.with_plane(rows, cols, f["cell_size_m"], origin, climate,
                                      base_m=elev.get("base_m", 0.0),
                                      gradient_row_m=elev.get("gradient_row_m", 0.0),
                                      gradient_col_m=elev.get("gradient_col_m", 0.0),
                                      frost_events=events, field_id=f["field_id"])

    sensors, regs, seen = [], [], set()
    for i, s in enumerate(doc["sensors"]):
        r, c = s["cell"]
        if not (0 <= r < rows and 0 <= c < cols):
            diags.append(f"sensors[{i}].cell: {s['cell']} outside {rows}x{cols} grid")
            continue
        if s["device_id"] in seen:
            diags.append(f"sensors[{i}].device_id: duplicate {s['device_id']}")
            continue
        seen.add(s["device_id"])
        sensors.append(SimSensor(s["device_id"], (r, c), s.get("report_period_s", 600),
                                 s.get("next_counter", 1), s.get("battery_pct", 100),
                                 s.get("phase_s", start)))
        if s.get("registered", True):
            lat, lon = model.cell_latlon((r, c))
            regs.append(SensorRegistration(s["device_id"], lat, lon, model.elevation((r, c)),
                                           s.get("label", f"sensor-{s['device_id']}"),
                                           f["field_id"]))
    sim = doc.get("simulation", {})
    seed = doc.get("seed", 0)

    members, member_ids = [], {}
    for i, m in enumerate(doc["members"]):
        if m["member_id"] in member_ids:
            diags.append(f"members[{i}].member_id: duplicate {m['member_id']}")
            continue
        spec = MemberSpec(m["member_id"], m.get("display_name", m["member_id"]), m["role"],
                          ConnectorCertificate.from_dict(m["certificate"]), m.get("enroll_at", start))
        member_ids[spec.member_id] = spec
        members.append(spec)
    gw = doc["gateway"]
    if member_ids.get(gw["member_id"]) is None or member_ids[gw["member_id"]].role != "gateway":
        diags.append(f"gateway.member_id: {gw['member_id']!r} is not a gateway member")

    offers, labels = [], set()
    for i, o in enumerate(doc.get("offers", [])):
        if o["label"] in labels:
            diags.append(f"offers[{i}].label: duplicate {o['label']!r}")
        labels.add(o["label"])
        prov = member_ids.get(o["provider"])
        if prov is None or prov.role != "provider":
            diags.append(f"offers[{i}].provider: {o['provider']!r} is not a provider member")
        if o["dataset_id"] != f["field_id"]:
            diags.append(f"offers[{i}].dataset_id: unknown dataset {o['dataset_id']!r}")
        p = o["policy"]
        policy = UsagePolicy(p["policy_id"], tuple(p["time_window"]), p["max_requests_per_hour"],
                             p["expires_at"], BBox.from_dict(p.get("spatial_scope")),
                             p.get("purpose", "frost-monitoring"))
        offers.append(OfferSpec(o["label"], o["provider"], o["dataset_id"],
                                o.get("publish_at", start), policy))

    script, contract_labels = [], set()
    for i, a in enumerate(doc.get("script", [])):
        params = {k: v for k, v in a.items() if k not in ("at", "actor", "action")}
        act = a["action"]
        if act in ("request_contract",) and "offer" in params and params["offer"] not in labels:
            diags.append(f"script[{i}].offer: unknown offer label {params['offer']!r}")
        if act == "request_contract":
            if "offer" not in params:
                diags.append(f"script[{i}]: request_contract needs 'offer'")
            if "as" in params:
                contract_labels.add(params["as"])
        if act in ("accept", "reject", "revoke_contract", "countersign", "data_request"):
            if "contract" not in params:
                diags.append(f"script[{i}]: {act} needs 'contract'")
            elif params["contract"] not in contract_labels:
                diags.append(f"script[{i}].contract: label {params['contract']!r} not bound by an "
                             "earlier request_contract")
        if act == "data_request" and "window" not in params and "window_s" not in params:
            diags.append(f"script[{i}]: data_request needs 'window' or 'window_s'")
        if act == "enroll" and a["actor"] not in member_ids and not (
                "certificate" in params and "role" in params):
            diags.append(f"script[{i}]: enroll of unknown actor {a['actor']!r} needs role+certificate")
        if act == "revoke_member" and params.get("member", a["actor"]) is None:
            diags.append(f"script[{i}]: revoke_member needs 'member'")
        script.append(Action(a["at"], a["actor"], act, params))

    fr = doc["frost"]
    try:
        frost = FrostConfig(fr["critical_temp_c"], fr.get("idw_power", 2.0),
                            fr.get("snap_epsilon_m", 0.5), fr.get("trend_window", 6))
    except ValueError as e:
        diags.append(f"frost: {e}")
    if diags:
        raise ConfigInvalid(diags)
    try:
        scenario = Scenario(model, sensors, seed, sim.get("duplicate_fraction", 0.0),
                            sim.get("replay_delay_s", 1))
    except ValueError as e:
        raise ConfigInvalid([f"sensors: {e}"]) from e
    return ScenarioConfig(
        raw=doc, name=doc.get("name", "scenario"), seed=seed, start_s=start, end_s=end,
        tick_s=clock.get("tick_s", 1), scenario=scenario, registrations=regs,
        dataset_description=f.get("description", ""), gateway_id=gw["member_id"],
        gateway_pos=(gw["lat"], gw["lon"]), approved_certs=list(doc.get("approved_certs", [])),
        members=members, offers=offers, script=script, frost=frost)


def load_config(path: str | os.PathLike, seed: int | None = None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigInvalid([f"{path}: {e}"]) from e
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = seed
    return parse_config(doc)
