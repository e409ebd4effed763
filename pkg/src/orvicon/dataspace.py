"""Data-space trust layer: enrolment, certified connectors, offers, contract
negotiation, usage-policy enforcement and audited transfers."""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable

from .audit import AuditLog
from .provider import InvalidWindow, ProviderStore, SensorRecord, UnknownDataset
from .wire import Envelope, make_envelope, sign_envelope, verify_envelope

RATE_WINDOW_S = 3600
OPERATOR_ID = "dataspace"
SYSTEM_ACTOR = "system"


class DataSpaceError(Exception):
    pass


class CertificateNotApproved(DataSpaceError):
    pass


class CertificateExpired(DataSpaceError):
    pass


class DuplicateMember(DataSpaceError):
    pass


class NotEnrolled(DataSpaceError):
    pass


class InvalidPolicy(DataSpaceError):
    pass


class InvalidTransition(DataSpaceError):
    pass


class WrongActor(DataSpaceError):
    pass


class UnknownContract(DataSpaceError):
    pass


class BadSignature(DataSpaceError):
    pass


class ReplayedMessage(DataSpaceError):
    pass


class BadRequest(DataSpaceError):
    pass


class PolicyDenied(DataSpaceError):
    reason = "PolicyDenied"


class WindowViolation(PolicyDenied):
    reason = "WindowViolation"


class ScopeViolation(PolicyDenied):
    reason = "ScopeViolation"


class RateExceeded(PolicyDenied):
    reason = "RateExceeded"


class ContractExpired(PolicyDenied):
    reason = "ContractExpired"


class ContractNotActive(PolicyDenied):
    reason = "ContractNotActive"


DENY_ERRORS = {c.reason: c for c in
               (WindowViolation, ScopeViolation, RateExceeded, ContractExpired, ContractNotActive)}


# ------------------------------------------------------------------ identities

class Role(str, Enum):
    PROVIDER = "provider"
    CONSUMER = "consumer"
    GATEWAY = "gateway"


@dataclass(frozen=True)
class ConnectorCertificate:
    cert_id: str
    connector_build_hash: str
    issued_by: str
    valid_until: int

    def to_dict(self) -> dict[str, Any]:
        return {"cert_id": self.cert_id, "connector_build_hash": self.connector_build_hash,
                "issued_by": self.issued_by, "valid_until": self.valid_until}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConnectorCertificate":
        return cls(str(d["cert_id"]), str(d["connector_build_hash"]), str(d["issued_by"]),
                   int(d["valid_until"]))


@dataclass
class MemberIdentity:
    member_id: str
    display_name: str
    role: Role
    shared_secret: bytes
    enrolled_at: int
    status: str = "active"

    @property
    def active(self) -> bool:
        return self.status == "active"


# ----------------------------------------------------------------- policies

@dataclass(frozen=True)
class BBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def well_ordered(self) -> bool:
        return self.lat_min <= self.lat_max and self.lon_min <= self.lon_max

    def contains_point(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def contains(self, other: "BBox") -> bool:
        return (self.lat_min <= other.lat_min and other.lat_max <= self.lat_max
                and self.lon_min <= other.lon_min and other.lon_max <= self.lon_max)

    def to_dict(self) -> dict[str, float]:
        return {"lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "BBox | None":
        if d is None:
            return None
        return cls(float(d["lat_min"]), float(d["lat_max"]), float(d["lon_min"]), float(d["lon_max"]))


@dataclass(frozen=True)
class UsagePolicy:
    policy_id: str
    time_window: tuple[int, int]
    max_requests_per_hour: int
    expires_at: int
    spatial_scope: BBox | None = None
    purpose: str = "frost-monitoring"

    def validate(self) -> None:
        a, b = self.time_window
        if a > b:
            raise InvalidPolicy(f"{self.policy_id}: time window start after end")
        if self.spatial_scope is not None and not self.spatial_scope.well_ordered():
            raise InvalidPolicy(f"{self.policy_id}: bounding box not well-ordered")
        if self.max_requests_per_hour < 1:
            raise InvalidPolicy(f"{self.policy_id}: max_requests_per_hour must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"policy_id": self.policy_id, "time_window": list(self.time_window),
                "max_requests_per_hour": self.max_requests_per_hour,
                "expires_at": self.expires_at,
                "spatial_scope": self.spatial_scope.to_dict() if self.spatial_scope else None,
                "purpose": self.purpose}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UsagePolicy":
        a, b = d["time_window"]
        return cls(str(d["policy_id"]), (int(a), int(b)), int(d["max_requests_per_hour"]),
                   int(d["expires_at"]), BBox.from_dict(d.get("spatial_scope")),
                   str(d.get("purpose", "frost-monitoring")))


# ------------------------------------------------------------------ contracts

class ContractState(str, Enum):
    OFFERED = "OFFERED"
    REQUESTED = "REQUESTED"
    AGREED = "AGREED"
    ACTIVE = "ACTIVE"
    REJECTED = "REJECTED"
    EXPIRED = "EXPIRED"
    REVOKED = "REVOKED"


class NegotiationEvent(str, Enum):
    CONSUMER_REQUEST = "ConsumerRequest"
    PROVIDER_ACCEPT = "ProviderAccept"
    PROVIDER_REJECT = "ProviderReject"
    CONSUMER_COUNTERSIGN = "ConsumerCountersign"
    PROVIDER_REVOKE = "ProviderRevoke"
    CLOCK_PAST_EXPIRY = "ClockPastExpiry"


S, E = ContractState, NegotiationEvent
NON_TERMINAL = (S.OFFERED, S.REQUESTED, S.AGREED, S.ACTIVE)
TERMINAL = frozenset({S.REJECTED, S.EXPIRED, S.REVOKED})

# (state, event) -> next state; the party allowed to fire each event is fixed
TRANSITIONS: dict[tuple[ContractState, NegotiationEvent], ContractState] = {
    (S.OFFERED, E.CONSUMER_REQUEST): S.REQUESTED,
    (S.REQUESTED, E.PROVIDER_ACCEPT): S.AGREED,
    (S.REQUESTED, E.PROVIDER_REJECT): S.REJECTED,
    (S.AGREED, E.CONSUMER_COUNTERSIGN): S.ACTIVE,
    **{(st, E.PROVIDER_REVOKE): S.REVOKED for st in NON_TERMINAL},
    **{(st, E.CLOCK_PAST_EXPIRY): S.EXPIRED for st in NON_TERMINAL},
}
EVENT_PARTY = {
    E.CONSUMER_REQUEST: "consumer", E.CONSUMER_COUNTERSIGN: "consumer",
    E.PROVIDER_ACCEPT: "provider", E.PROVIDER_REJECT: "provider",
    E.PROVIDER_REVOKE: "provider", E.CLOCK_PAST_EXPIRY: "system",
}
AUDIT_EVENT_FOR = {
    E.CONSUMER_REQUEST: "REQUEST", E.PROVIDER_ACCEPT: "DECISION",
    E.PROVIDER_REJECT: "DECISION", E.CONSUMER_COUNTERSIGN: "COUNTERSIGN",
    E.PROVIDER_REVOKE: "REVOKE", E.CLOCK_PAST_EXPIRY: "EXPIRE",
}


def next_state(state: ContractState, event: NegotiationEvent) -> ContractState:
    try:
        return TRANSITIONS[(ContractState(state), NegotiationEvent(event))]
    except KeyError:
        raise InvalidTransition(f"no transition from {state} on {event}") from None


@dataclass(frozen=True)
class Contract:
    contract_id: str
    dataset_id: str
    provider_id: str
    policy: UsagePolicy
    consumer_id: str | None = None
    state: ContractState = ContractState.OFFERED
    history: tuple[tuple[str, str, int], ...] = ()
    offer_id: str | None = None  # None on the catalog template itself

    def to_dict(self) -> dict[str, Any]:
        return {"contract_id": self.contract_id, "dataset_id": self.dataset_id,
                "provider_id": self.provider_id, "consumer_id": self.consumer_id,
                "policy": self.policy.to_dict(), "state": self.state.value,
                "history": [list(h) for h in self.history], "offer_id": self.offer_id}

    def state_at(self, t: int) -> ContractState | None:
        """State according to history at instant ``t`` (last entry with at <= t)."""
        current = None
        for st, _actor, at in self.history:
            if at <= t:
                current = ContractState(st)
        return current


def negotiate_transition(contract: Contract, event: NegotiationEvent, actor: str, now: int,
                         is_enrolled: Callable[[str], bool] | None = None) -> Contract:
    """Apply one negotiation event; pure apart from the optional membership check."""
    event = NegotiationEvent(event)
    party = EVENT_PARTY[event]
    if party != "system" and is_enrolled is not None and not is_enrolled(actor):
        raise NotEnrolled(f"{actor!r} is not an active member")
    new_state = next_state(contract.state, event)
    consumer = contract.consumer_id
    if party == "provider" and actor != contract.provider_id:
        raise WrongActor(f"{event.value} must come from provider {contract.provider_id}")
    if party == "system" and actor != SYSTEM_ACTOR:
        raise WrongActor(f"{event.value} is a clock event")
    if party == "consumer":
        if event is E.CONSUMER_REQUEST and consumer is None:
            if actor == contract.provider_id:
                raise WrongActor("provider cannot request its own offer")
            consumer = actor
        elif actor != consumer:
            raise WrongActor(f"{event.value} must come from consumer {consumer}")
    return replace(contract, state=new_state, consumer_id=consumer,
                   history=contract.history + ((new_state.value, actor, now),))


# --------------------------------------------------------------- enforcement

@dataclass(frozen=True)
class DataRequest:
    window: tuple[int, int]
    bbox: BBox | None = None


@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class Deny:
    reason: str


def evaluate_policy(request: DataRequest, contract: Contract, now: int,
                    transfer_times: list[int]) -> Allow | Deny:
    pol = contract.policy
    if contract.state is ContractState.EXPIRED:
        return Deny("ContractExpired")
    if contract.state is not ContractState.ACTIVE:
        return Deny("ContractNotActive")
    if now >= pol.expires_at:
        return Deny("ContractExpired")
    a, b = request.window
    pa, pb = pol.time_window
    if not (pa <= a <= b <= pb):
        return Deny("WindowViolation")
    if request.bbox is not None and pol.spatial_scope is not None:
        if not pol.spatial_scope.contains(request.bbox):
            return Deny("ScopeViolation")
    recent = sum(1 for t in transfer_times if now - RATE_WINDOW_S < t <= now)
    if recent >= pol.max_requests_per_hour:
        return Deny("RateExceeded")
    return Allow()


def record_in_scope(rec: SensorRecord, contract: Contract, request: DataRequest) -> bool:
    pa, pb = contract.policy.time_window
    a, b = request.window
    if not (max(a, pa) <= rec.timestamp_s <= min(b, pb)):
        return False
    for box in (contract.policy.spatial_scope, request.bbox):
        if box is not None and not box.contains_point(rec.lat, rec.lon):
            return False
    return True


# ------------------------------------------------------------------ service

class DataSpace:
    """The governed connector pair plus trust services, in one object.

    Contract mutations and audit appends are serialized by ``_lock``.
    """

    def __init__(self, approved_certs: set[str] | list[str], rng: random.Random | None = None,
                 audit: AuditLog | None = None):
        self.approved = set(approved_certs)
        self.rng = rng or random.SystemRandom()
        self.audit = audit or AuditLog()
        self.members: dict[str, MemberIdentity] = {}
        self.stores: dict[str, ProviderStore] = {}
        self.contracts: dict[str, Contract] = {}
        self.transfers: dict[str, list[int]] = {}
        self.policy_counts: dict[str, dict[str, int]] = {}
        self._seen_msgs: set[str] = set()
        self._next_contract = 1
        self.operator_secret = self._secret()
        self._lock = threading.RLock()

    def _secret(self) -> bytes:
        return self.rng.getrandbits(256).to_bytes(32, "big")

    # -- membership
    def enroll(self, member_id: str, display_name: str, role: Role | str,
               cert: ConnectorCertificate, now: int) -> MemberIdentity:
        with self._lock:
            if cert.cert_id not in self.approved:
                raise CertificateNotApproved(f"connector certificate {cert.cert_id!r} not approved")
            if not now < cert.valid_until:
                raise CertificateExpired(f"certificate {cert.cert_id!r} expired at {cert.valid_until}")
            if member_id in self.members or member_id in (OPERATOR_ID, SYSTEM_ACTOR):
                raise DuplicateMember(member_id)
            m = MemberIdentity(member_id, display_name, Role(role), self._secret(), now)
            self.members[member_id] = m
            self.audit.append(now, member_id, "ENROLL",
                              {"member_id": member_id, "role": m.role.value, "cert_id": cert.cert_id})
            return m

    def revoke_member(self, member_id: str, now: int, actor: str = OPERATOR_ID) -> None:
        with self._lock:
            m = self.members.get(member_id)
            if m is None:
                raise NotEnrolled(member_id)
            m.status = "revoked"
            self.audit.append(now, actor, "REVOKE", {"kind": "member", "member_id": member_id})

    def is_active(self, member_id: str) -> bool:
        m = self.members.get(member_id)
        return m is not None and m.active

    def key_for(self, member_id: str) -> bytes | None:
        m = self.members.get(member_id)
        return m.shared_secret if m is not None and m.active else None

    def _require(self, member_id: str, role: Role | None = None) -> MemberIdentity:
        m = self.members.get(member_id)
        if m is None or not m.active:
            raise NotEnrolled(f"{member_id!r} is not an active member")
        if role is not None and m.role is not role:
            raise WrongActor(f"{member_id!r} is not a {role.value}")
        return m

    def attach_store(self, provider_id: str, store: ProviderStore) -> None:
        self.stores[provider_id] = store

    # -- catalog
    def _new_contract_id(self) -> str:
        cid = f"ctr-{self._next_contract:04d}"
        self._next_contract += 1
        return cid

    def publish_offer(self, provider_id: str, dataset_id: str, policy: UsagePolicy,
                      now: int) -> Contract:
        with self._lock:
            self._require(provider_id, Role.PROVIDER)
            store = self.stores.get(provider_id)
            if store is None or not store.has_dataset(dataset_id):
                raise UnknownDataset(dataset_id)
            policy.validate()
            c = Contract(self._new_contract_id(), dataset_id, provider_id, policy,
                         history=((ContractState.OFFERED.value, provider_id, now),))
            self.contracts[c.contract_id] = c
            self.audit.append(now, provider_id, "OFFER",
                              {"offer_id": c.contract_id, "dataset_id": dataset_id,
                               "provider_id": provider_id, "policy": policy.to_dict()})
            return c

    def catalog(self) -> list[dict[str, Any]]:
        with self._lock:
            out = []
            for c in self.contracts.values():
                if c.offer_id is None and c.state is ContractState.OFFERED:
                    desc = self.stores[c.provider_id].describe(c.dataset_id)
                    out.append({"offer_id": c.contract_id, "provider_id": c.provider_id,
                                "dataset": desc.to_dict(), "policy": c.policy.to_dict()})
            return out

    # -- negotiation
    def contract(self, contract_id: str) -> Contract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise UnknownContract(contract_id) from None

    def _apply(self, c: Contract, event: NegotiationEvent, actor: str, now: int) -> Contract:
        new = negotiate_transition(c, event, actor, now, self.is_active)
        self.contracts[new.contract_id] = new
        self.audit.append(now, actor, AUDIT_EVENT_FOR[event],
                          {"contract_id": new.contract_id, "event": event.value,
                           "from": c.state.value, "to": new.state.value})
        return new

    def request_contract(self, consumer_id: str, offer_id: str, now: int) -> Contract:
        with self._lock:
            self._require(consumer_id, Role.CONSUMER)
            offer = self.contract(offer_id)
            if offer.offer_id is not None:
                raise InvalidTransition(f"{offer_id} is a negotiated contract, not an offer")
            if offer.state is not ContractState.OFFERED:
                raise InvalidTransition(f"offer {offer_id} is {offer.state.value}")
            new = negotiate_transition(offer, E.CONSUMER_REQUEST, consumer_id, now, self.is_active)
            new = replace(new, contract_id=self._new_contract_id(), offer_id=offer_id,
                          history=offer.history[:1] + new.history[-1:])
            self.contracts[new.contract_id] = new
            self.audit.append(now, consumer_id, "REQUEST",
                              {"contract_id": new.contract_id, "offer_id": offer_id,
                               "consumer_id": consumer_id, "event": E.CONSUMER_REQUEST.value,
                               "from": ContractState.OFFERED.value, "to": new.state.value})
            return new

    def transition(self, contract_id: str, event: NegotiationEvent | str, actor: str,
                   now: int) -> Contract:
        with self._lock:
            event = NegotiationEvent(event)
            if event is E.CONSUMER_REQUEST:
                return self.request_contract(actor, contract_id, now)
            return self._apply(self.contract(contract_id), event, actor, now)

    def expire_contracts(self, now: int) -> list[Contract]:
        out = []
        with self._lock:
            for cid in sorted(self.contracts):
                c = self.contracts[cid]
                if c.state in NON_TERMINAL and now >= c.policy.expires_at:
                    # stamped with the expiry instant so lazy and per-tick expiry agree
                    out.append(self._apply(c, E.CLOCK_PAST_EXPIRY, SYSTEM_ACTOR, c.policy.expires_at))
        return out

    # -- transfer
    def _count(self, policy_id: str, outcome: str) -> None:
        per = self.policy_counts.setdefault(policy_id, {})
        per[outcome] = per.get(outcome, 0) + 1

    def _deny(self, now: int, actor: str, reason: str, contract_id: str | None,
              policy_id: str | None) -> None:
        self._count(policy_id or "-", f"deny:{reason}")
        self.audit.append(now, actor, "POLICY_DENY",
                          {"contract_id": contract_id, "reason": reason})

    def transfer_data(self, env: Envelope, now: int) -> Envelope:
        """Serve a signed DATA_REQUEST; raises a typed error on any refusal."""
        with self._lock:
            body = env.body
            cid = body.get("contract_id") if isinstance(body.get("contract_id"), str) else None
            member = self.members.get(env.sender_id)
            if member is None or not member.active:
                self._deny(now, env.sender_id, "NotEnrolled", cid, None)
                raise NotEnrolled(f"{env.sender_id!r} is not an active member")
            if not verify_envelope(env, member.shared_secret):
                self._deny(now, env.sender_id, "BadSignature", cid, None)
                raise BadSignature("DATA_REQUEST signature invalid")
            if cid is None or cid not in self.contracts:
                self._deny(now, env.sender_id, "UnknownContract", cid, None)
                raise UnknownContract(str(cid))
            c = self.contracts[cid]
            if c.consumer_id != env.sender_id:
                self._deny(now, env.sender_id, "WrongActor", cid, c.policy.policy_id)
                raise WrongActor(f"{env.sender_id!r} is not the consumer of {cid}")
            try:
                a, b = body["window"]
                req = DataRequest((int(a), int(b)), BBox.from_dict(body.get("bbox")))
            except (KeyError, TypeError, ValueError) as e:
                self._deny(now, env.sender_id, "BadRequest", cid, c.policy.policy_id)
                raise BadRequest(f"malformed DATA_REQUEST: {e}") from e
            if req.window[0] > req.window[1]:
                self._deny(now, env.sender_id, "WindowViolation", cid, c.policy.policy_id)
                raise WindowViolation("request window start after end")
            times = self.transfers.setdefault(cid, [])
            verdict = evaluate_policy(req, c, now, times)
            if isinstance(verdict, Deny):
                self._deny(now, env.sender_id, verdict.reason, cid, c.policy.policy_id)
                raise DENY_ERRORS[verdict.reason](f"{cid}: {verdict.reason}")
            provider = self.members.get(c.provider_id)
            if provider is None or not provider.active:
                self._deny(now, env.sender_id, "ProviderUnavailable", cid, c.policy.policy_id)
                raise NotEnrolled(f"provider {c.provider_id!r} is not active")
            store = self.stores[c.provider_id]
            try:
                raw = store.query_records(c.dataset_id, req.window)
            except (InvalidWindow, UnknownDataset) as e:
                self._deny(now, env.sender_id, type(e).__name__, cid, c.policy.policy_id)
                raise
            recs = [r for r in raw if record_in_scope(r, c, req)]
            times.append(now)
            self._count(c.policy.policy_id, "allow")
            self.audit.append(now, env.sender_id, "DATA_TRANSFER", {
                "contract_id": cid, "provider_id": c.provider_id, "consumer_id": env.sender_id,
                "dataset_id": c.dataset_id, "window": list(req.window),
                "bbox": req.bbox.to_dict() if req.bbox else None,
                "record_count": len(recs),
                "records": [[r.device_id, r.frame_counter, r.timestamp_s, r.lat, r.lon]
                            for r in recs],
            })
            reply = make_envelope(c.provider_id, "DATA_RESPONSE",
                                  {"contract_id": cid, "in_reply_to": env.msg_id,
                                   "records": [r.to_dict() for r in recs]}, self.rng)
            return sign_envelope(reply, provider.shared_secret)

    # -- message dispatch
    def _reply(self, msg_type: str, body: dict[str, Any]) -> Envelope:
        return sign_envelope(make_envelope(OPERATOR_ID, msg_type, body, self.rng),
                             self.operator_secret)

    def _error(self, exc: Exception, in_reply_to: str) -> Envelope:
        return self._reply("ERROR", {"error": type(exc).__name__, "message": str(exc),
                                     "in_reply_to": in_reply_to})

    def _authenticate(self, env: Envelope, now: int) -> MemberIdentity:
        m = self.members.get(env.sender_id)
        if m is None or not m.active:
            raise NotEnrolled(f"{env.sender_id!r} is not an active member")
        if not verify_envelope(env, m.shared_secret):
            raise BadSignature(f"{env.msg_type} signature invalid")
        return m

    def handle(self, env: Envelope, now: int) -> Envelope:
        """Process one inbound envelope; every failure becomes an ERROR reply."""
        try:
            with self._lock:
                if env.msg_id in self._seen_msgs:
                    raise ReplayedMessage(env.msg_id)
                self._seen_msgs.add(env.msg_id)
                self.expire_contracts(now)
                return self._dispatch(env, now)
        except (DataSpaceError, UnknownDataset, InvalidWindow) as e:
            return self._error(e, env.msg_id)

    def _dispatch(self, env: Envelope, now: int) -> Envelope:
        body, t = env.body, env.msg_type
        if t == "ENROLL":
            try:
                cert = ConnectorCertificate.from_dict(body["certificate"])
                m = self.enroll(str(body["member_id"]), str(body.get("display_name", "")),
                                body["role"], cert, now)
            except (KeyError, TypeError, ValueError) as e:
                raise BadRequest(f"malformed ENROLL: {e}") from e
            return self._reply("ENROLL_ACK", {"member_id": m.member_id, "role": m.role.value,
                                              "shared_secret": m.shared_secret.hex(),
                                              "enrolled_at": m.enrolled_at,
                                              "in_reply_to": env.msg_id})
        if t == "DATA_REQUEST":
            return self.transfer_data(env, now)
        self._authenticate(env, now)
        if t == "CATALOG_QUERY":
            return self._reply("CATALOG_RESULT", {"offers": self.catalog(), "in_reply_to": env.msg_id})
        if t == "OFFER_PUBLISH":
            try:
                policy = UsagePolicy.from_dict(body["policy"])
                dsid = str(body["dataset_id"])
            except (KeyError, TypeError, ValueError) as e:
                raise BadRequest(f"malformed OFFER_PUBLISH: {e}") from e
            c = self.publish_offer(env.sender_id, dsid, policy, now)
            return self._reply("CATALOG_RESULT", {"offers": [{"offer_id": c.contract_id,
                                                              "policy": policy.to_dict()}],
                                                  "in_reply_to": env.msg_id})
        if t == "CONTRACT_REQUEST":
            c = self.request_contract(env.sender_id, str(body.get("offer_id")), now)
        elif t == "CONTRACT_DECISION":
            event = {"accept": E.PROVIDER_ACCEPT, "reject": E.PROVIDER_REJECT,
                     "revoke": E.PROVIDER_REVOKE}.get(body.get("decision"))
            if event is None:
                raise BadRequest(f"unknown decision {body.get('decision')!r}")
            c = self._apply(self.contract(str(body.get("contract_id"))), event, env.sender_id, now)
        elif t == "CONTRACT_COUNTERSIGN":
            c = self._apply(self.contract(str(body.get("contract_id"))), E.CONSUMER_COUNTERSIGN,
                            env.sender_id, now)
        else:
            raise BadRequest(f"{t} is not accepted by the data space")
        return self._reply("CONTRACT_DECISION", {"contract": c.to_dict(), "in_reply_to": env.msg_id})
