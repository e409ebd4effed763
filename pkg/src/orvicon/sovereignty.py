"""Post-hoc sovereignty analysis over an exported audit log.

Deliberately self-contained: contract states, membership and policies are
rebuilt from the audit records alone, with its own copy of the transition
table, so it can check the data space without trusting its code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

_LEGAL = {
    ("OFFERED", "REQUESTED"), ("REQUESTED", "AGREED"), ("REQUESTED", "REJECTED"),
    ("AGREED", "ACTIVE"),
    ("OFFERED", "REVOKED"), ("REQUESTED", "REVOKED"), ("AGREED", "REVOKED"), ("ACTIVE", "REVOKED"),
    ("OFFERED", "EXPIRED"), ("REQUESTED", "EXPIRED"), ("AGREED", "EXPIRED"), ("ACTIVE", "EXPIRED"),
}


@dataclass
class AuditAnalysis:
    violations: list[str] = field(default_factory=list)
    delivered: dict[str, int] = field(default_factory=dict)
    transfers: int = 0
    denials: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _in_box(box: dict | None, lat: float, lon: float) -> bool:
    if box is None:
        return True
    return box["lat_min"] <= lat <= box["lat_max"] and box["lon_min"] <= lon <= box["lon_max"]


def analyze_audit(records: Iterable[Any]) -> AuditAnalysis:
    """Accepts AuditRecord objects or their dict form."""
    out = AuditAnalysis()
    active: dict[str, bool] = {}
    offers: dict[str, dict] = {}
    contracts: dict[str, dict] = {}
    transfer_times: dict[str, list[int]] = {}

    for raw in records:
        seq = "?"
        try:
            r = raw.to_dict() if hasattr(raw, "to_dict") else raw
            seq = r.get("seq", "?")
            ev, at, d, seq = r["event"], r["at"], r["details"], r["seq"]
            if ev == "ENROLL":
                active[d["member_id"]] = True
            elif ev == "REVOKE" and d.get("kind") == "member":
                active[d["member_id"]] = False
            elif ev == "OFFER":
                offers[d["offer_id"]] = {"policy": d["policy"], "state": "OFFERED",
                                         "provider": d["provider_id"], "dataset": d["dataset_id"]}
            elif ev == "REQUEST":
                offer = offers.get(d["offer_id"])
                if offer is None or offer["state"] != "OFFERED":
                    out.violations.append(f"seq {seq}: request against unknown/withdrawn offer")
                    continue
                contracts[d["contract_id"]] = {"policy": offer["policy"], "state": d["to"],
                                               "consumer": d["consumer_id"],
                                               "provider": offer["provider"]}
                if (d["from"], d["to"]) != ("OFFERED", "REQUESTED"):
                    out.violations.append(f"seq {seq}: illegal request transition")
            elif ev in ("DECISION", "COUNTERSIGN", "REVOKE", "EXPIRE"):
                cid = d["contract_id"]
                target = contracts.get(cid) or offers.get(cid)
                if target is None:
                    out.violations.append(f"seq {seq}: transition on unknown contract {cid}")
                    continue
                if target["state"] != d["from"]:
                    out.violations.append(f"seq {seq}: {cid} recorded from={d['from']} "
                                          f"but replay says {target['state']}")
                if (d["from"], d["to"]) not in _LEGAL:
                    out.violations.append(f"seq {seq}: illegal transition {d['from']}->{d['to']}")
                target["state"] = d["to"]
            elif ev == "POLICY_DENY":
                out.denials += 1
            elif ev == "DATA_TRANSFER":
                out.transfers += 1
                cid, consumer = d["contract_id"], d["consumer_id"]
                recs = d["records"]
                out.delivered[consumer] = out.delivered.get(consumer, 0) + len(recs)
                c = contracts.get(cid)
                if not active.get(consumer, False):
                    out.violations.append(f"seq {seq}: transfer to non-member/revoked {consumer}")
                if c is None:
                    out.violations.append(f"seq {seq}: transfer under unknown contract {cid}")
                    continue
                if c["consumer"] != consumer or r["actor"] != consumer:
                    out.violations.append(f"seq {seq}: transfer to party outside contract {cid}")
                if c["state"] != "ACTIVE":
                    out.violations.append(f"seq {seq}: transfer under {c['state']} contract {cid}")
                pol = c["policy"]
                if at >= pol["expires_at"]:
                    out.violations.append(f"seq {seq}: transfer after policy expiry")
                if d["record_count"] != len(recs):
                    out.violations.append(f"seq {seq}: record_count mismatch")
                a, b = pol["time_window"]
                scope = pol.get("spatial_scope")
                for dev, ctr, ts, lat, lon in recs:
                    if not a <= ts <= b:
                        out.violations.append(f"seq {seq}: record {dev}/{ctr} at {ts} outside window")
                    if not _in_box(scope, lat, lon):
                        out.violations.append(f"seq {seq}: record {dev}/{ctr} outside spatial scope")
                times = transfer_times.setdefault(cid, [])
                times.append(at)
                recent = sum(1 for t in times if at - 3600 < t <= at)
                if recent > pol["max_requests_per_hour"]:
                    out.violations.append(f"seq {seq}: rate limit exceeded on {cid}")
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            out.violations.append(f"seq {seq}: malformed audit record ({type(e).__name__}: {e})")
    return out
