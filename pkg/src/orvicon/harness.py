"""Scenario runner: simulated clock, all components, one machine-readable report."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .audit import AuditRecord, read_audit, verify_audit_chain, write_audit
from .config import ScenarioConfig
from .frost import build_alert, field_snapshot, latest_readings
from .gateway import Gateway
from .geo import project
from .net import InProcessTransport, NetTransport
from .provider import SensorRecord
from .sensorsim import emission_schedule
from .sovereignty import analyze_audit
from .wire import Envelope, canonical_json, make_envelope, sign_envelope

REPORT_SCHEMA_VERSION = 1


class VerificationFailed(Exception):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


def report_digest(report: dict[str, Any]) -> str:
    body = {k: v for k, v in report.items() if k != "digest"}
    return hashlib.sha256(canonical_json(body)).hexdigest()


def report_bytes(report: dict[str, Any]) -> bytes:
    return canonical_json(report) + b"\n"


@dataclass
class RunResult:
    report: dict[str, Any]
    audit: list[AuditRecord]
    last_snapshot: np.ndarray | None = None
    last_zones: list = field(default_factory=list)


class _Client:
    """Key material and bookkeeping for every scripted actor."""

    def __init__(self, seed: int):
        self.rng = random.Random(f"{seed}:clients")
        self.secrets: dict[str, bytes] = {}

    def key(self, actor: str) -> bytes:
        # actors that never enrolled sign with a key the data space cannot know
        return self.secrets.get(actor) or hashlib.sha256(f"unenrolled:{actor}".encode()).digest()

    def envelope(self, actor: str, msg_type: str, body: dict[str, Any], *, forge=False,
                 sign=True) -> Envelope:
        env = make_envelope(actor, msg_type, body, self.rng)
        if not sign:
            return env
        key = self.rng.getrandbits(256).to_bytes(32, "big") if forge else self.key(actor)
        return sign_envelope(env, key)


class Runner:
    def __init__(self, cfg: ScenarioConfig, net: bool = False, store_dir=None):
        self.cfg = cfg
        self.transport = NetTransport(cfg, store_dir) if net else InProcessTransport(cfg, store_dir)
        model = cfg.model
        positions = {s.device_id: model.cell_latlon(s.cell) for s in cfg.scenario.sensors}
        gx, gy = project(model.origin, *cfg.gateway_pos)

        def distance(dev: int) -> float:
            lat, lon = positions.get(dev, cfg.gateway_pos)
            x, y = project(model.origin, lat, lon)
            return float(np.hypot(x - gx, y - gy))

        self.gateway = Gateway(cfg.gateway_id, distance)
        self.client = _Client(cfg.seed)
        self.offers: dict[str, str] = {}
        self.contracts: dict[str, str] = {}
        self.pool: dict[str, dict[tuple[int, int], SensorRecord]] = {}
        self.actions: list[dict[str, Any]] = []
        self.alerts: list[dict[str, Any]] = []
        self.analyses = 0
        self.provider_stats = {"batches": 0, "rejected_batches": 0, "stored": 0,
                               "quarantined": 0, "duplicates": 0}
        self.last_snapshot = None
        self.last_zones: list = []

    # --------------------------------------------------------------- backhaul
    def _forward(self, now: int, force: bool = False) -> None:
        for batch in self.gateway.poll(now, force=force):
            env = self.client.envelope(self.cfg.gateway_id, "INGEST_BATCH", batch.to_body())
            reply = self.transport.ingest(env, now)
            self.provider_stats["batches"] += 1
            if reply.msg_type == "INGEST_ACK":
                for k in ("stored", "quarantined", "duplicates"):
                    self.provider_stats[k] += reply.body[k]
            else:
                self.provider_stats["rejected_batches"] += 1

    # ---------------------------------------------------------------- actions
    def _schedule(self) -> list[tuple[int, int, str, str, dict[str, Any]]]:
        items = []
        for m in self.cfg.members:
            if m.enroll_at is not None:
                items.append((m.enroll_at, 0, m.member_id, "enroll", {}))
        for o in self.cfg.offers:
            items.append((o.publish_at, 1, o.provider, "publish", {"offer": o.label}))
        for a in self.cfg.script:
            items.append((a.at, 2, a.actor, a.action, a.params))
        # stable: same instant keeps enrol < publish < script order
        return sorted(items, key=lambda it: (it[0], it[1]))

    def _send(self, now: int, actor: str, msg_type: str, body: dict[str, Any],
              forge: bool = False, sign: bool = True) -> Envelope:
        env = self.client.envelope(actor, msg_type, dict(body, sent_at=now), forge=forge, sign=sign)
        return self.transport.request(env, now)

    def _contract_id(self, label: str) -> str:
        return self.contracts.get(label, f"unbound:{label}")

    def _do(self, now: int, actor: str, action: str, p: dict[str, Any]) -> dict[str, Any]:
        cfg = self.cfg
        forge = bool(p.get("forge", False))
        if action == "enroll":
            spec = next((m for m in cfg.members if m.member_id == actor), None)
            role = p.get("role") or (spec.role if spec else "consumer")
            cert = p.get("certificate") or spec.certificate.to_dict()
            reply = self._send(now, actor, "ENROLL",
                               {"member_id": actor, "display_name": spec.display_name if spec else actor,
                                "role": role, "certificate": cert}, sign=False)
            if reply.msg_type == "ENROLL_ACK":
                self.client.secrets[actor] = bytes.fromhex(reply.body["shared_secret"])
        elif action == "publish":
            offer = next(o for o in cfg.offers if o.label == p["offer"])
            reply = self._send(now, actor, "OFFER_PUBLISH",
                               {"dataset_id": offer.dataset_id, "policy": offer.policy.to_dict()},
                               forge=forge)
            if reply.msg_type == "CATALOG_RESULT":
                self.offers[offer.label] = reply.body["offers"][0]["offer_id"]
        elif action == "catalog":
            reply = self._send(now, actor, "CATALOG_QUERY", {}, forge=forge)
        elif action == "request_contract":
            offer_id = self.offers.get(p["offer"], f"unpublished:{p['offer']}")
            reply = self._send(now, actor, "CONTRACT_REQUEST", {"offer_id": offer_id}, forge=forge)
            if reply.msg_type == "CONTRACT_DECISION" and "as" in p:
                self.contracts[p["as"]] = reply.body["contract"]["contract_id"]
        elif action in ("accept", "reject", "revoke_contract"):
            decision = {"accept": "accept", "reject": "reject", "revoke_contract": "revoke"}[action]
            reply = self._send(now, actor, "CONTRACT_DECISION",
                               {"contract_id": self._contract_id(p["contract"]),
                                "decision": decision}, forge=forge)
        elif action == "countersign":
            reply = self._send(now, actor, "CONTRACT_COUNTERSIGN",
                               {"contract_id": self._contract_id(p["contract"])}, forge=forge)
        elif action == "data_request":
            window = p.get("window") or [now - p["window_s"], now]
            body = {"contract_id": self._contract_id(p["contract"]), "window": list(window)}
            if "bbox" in p:
                body["bbox"] = p["bbox"]
            reply = self._send(now, actor, "DATA_REQUEST", body, forge=forge)
            if reply.msg_type == "DATA_RESPONSE":
                recs = [SensorRecord(**r) for r in reply.body["records"]]
                pool = self.pool.setdefault(actor, {})
                for r in recs:
                    pool[r.identity] = r
                out = {"ok": True, "records": len(recs)}
                if p.get("analyze", True) and pool:
                    out["alert"] = self._analyze(now, actor, p["contract"], list(pool.values()))
                return out
        elif action == "revoke_member":
            try:
                self.transport.revoke_member(p.get("member", actor), now)
                return {"ok": True}
            except Exception as e:
                return {"ok": False, "error": type(e).__name__}
        else:
            raise ValueError(f"unknown action {action}")
        if reply.msg_type == "ERROR":
            return {"ok": False, "error": reply.body["error"]}
        return {"ok": True}

    def _analyze(self, now: int, actor: str, label: str, records: list[SensorRecord]) -> bool:
        cfg = self.cfg
        self.analyses += 1
        alert = build_alert(cfg.grid, records, cfg.frost, now)
        self.last_snapshot = field_snapshot(cfg.grid, latest_readings(cfg.grid, records, now), cfg.frost)
        self.last_zones = list(alert.zones) if alert else []
        if alert is None:
            return False
        self.alerts.append(dict(alert.to_dict(), actor=actor, contract=label))
        return True

    # -------------------------------------------------------------------- run
    def run(self) -> RunResult:
        cfg = self.cfg
        emissions = emission_schedule(cfg.scenario, (cfg.start_s, cfg.end_s))
        schedule = self._schedule()
        ei = si = 0
        try:
            now = cfg.start_s
            while now <= cfg.end_s:
                self.transport.tick(now)
                while ei < len(emissions) and emissions[ei].t <= now:
                    self.gateway.receive(emissions[ei].payload, now)
                    ei += 1
                    if self.gateway.due(now):
                        self._forward(now)
                self._forward(now)
                while si < len(schedule) and schedule[si][0] <= now:
                    at, _, actor, action, params = schedule[si]
                    si += 1
                    try:
                        outcome = self._do(now, actor, action, params)
                    except Exception as e:  # never abort a run on protocol trouble
                        outcome = {"ok": False, "error": f"client:{type(e).__name__}"}
                    self.actions.append(dict(outcome, at=now, actor=actor, action=action))
                now += cfg.tick_s
            self._forward(cfg.end_s, force=True)
        finally:
            closed = self.transport.close(cfg.end_s)
        audit = closed["audit"]
        analysis = analyze_audit(audit)
        bad = verify_audit_chain(audit)
        report = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scenario": cfg.name,
            "seed": cfg.seed,
            "mode": self.transport.mode,
            "gateway": dict(self.gateway.stats),
            "provider": dict(self.provider_stats, store_digest=closed["store_digest"]),
            "actions": self.actions,
            "policies": closed["policy_counts"],
            "transfers": {"count": analysis.transfers, "records_by_actor": analysis.delivered},
            "analyses": self.analyses,
            "alerts": self.alerts,
            "audit": {"records": len(audit), "head": audit[-1].chain_hash if audit else None,
                      "verification": "ok" if bad is None else {"first_bad_seq": bad},
                      "sovereignty_violations": analysis.violations},
        }
        report["digest"] = report_digest(report)
        return RunResult(report, audit, self.last_snapshot, self.last_zones)


def run(cfg: ScenarioConfig, out_path=None, audit_path=None, net: bool = False,
        store_dir=None) -> RunResult:
    result = Runner(cfg, net=net, store_dir=store_dir).run()
    if out_path is not None:
        Path(out_path).write_bytes(report_bytes(result.report))
        write_audit(audit_path or default_audit_path(out_path), result.audit)
    return result


def default_audit_path(report_path) -> Path:
    p = Path(report_path)
    return p.with_name(p.name + ".audit.jsonl")


def verify(report_path, audit_path) -> list[str]:
    """Empty list when report digest, audit chain and sovereignty all check out."""
    diags: list[str] = []
    try:
        report = json.loads(Path(report_path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        return [f"report unreadable: {e}"]
    try:
        audit = read_audit(audit_path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        return [f"audit unreadable: {e}"]
    if report.get("digest") != report_digest(report):
        diags.append("report digest mismatch")
    bad = verify_audit_chain(audit)
    if bad is not None:
        diags.append(f"audit chain broken at seq {bad}")
    meta = report.get("audit", {})
    if meta.get("records") != len(audit):
        diags.append(f"audit has {len(audit)} records, report says {meta.get('records')}")
    if audit and meta.get("head") != audit[-1].chain_hash:
        diags.append("audit head hash differs from report")
    analysis = analyze_audit(audit)
    diags.extend(f"sovereignty: {v}" for v in analysis.violations)
    if report.get("transfers", {}).get("records_by_actor") != analysis.delivered:
        diags.append("report transfer counts disagree with audit")
    return diags
