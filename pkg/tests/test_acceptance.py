"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
"""

import hashlib
import hmac
import json
import math
import random
import subprocess
import sys
import time
from dataclasses import replace

from orvicon.audit import read_audit, write_audit
from orvicon.config import load_config, parse_config
from orvicon.dataspace import (BBox, CertificateExpired, CertificateNotApproved, ConnectorCertificate,
                               DataSpace, NegotiationEvent, UsagePolicy)
from orvicon.frost import FrostConfig, GridSpec, Reading, field_snapshot, idw_interpolate
from orvicon.harness import Runner, report_bytes, run, verify
from orvicon.provider import ProviderStore, SensorRegistration
from orvicon.scenario_gen import random_scenario
from orvicon.wire import (AnnotatedFrame, FrameCorrupt, FrameMalformed, IngestionBatch, UplinkFrame,
                          crc16_ccitt_false, decode_frame, encode_frame, hmac_sha256_hex, make_envelope,
                          sign_envelope, with_crc)


# ------------------------------------------------------------------ 1

def _capture(runner):
    """Wrap the transport so every DATA_RESPONSE actually handed to a client is kept."""
    seen = []
    inner = runner.transport.request

    def request(env, now):
        reply = inner(env, now)
        if reply.msg_type == "DATA_RESPONSE":
            seen.append((env.sender_id, now, reply.body["contract_id"], reply.body["records"]))
        return reply
    runner.transport.request = request
    return seen


def _brute_force_check(audit, deliveries):
    """Replay the audit trail by hand and judge every delivery against it."""
    problems = []
    members, offers, contracts = {}, {}, {}
    transfers = [r for r in audit if r.event == "DATA_TRANSFER"]
    if len(transfers) != len(deliveries):
        problems.append(f"{len(deliveries)} deliveries but {len(transfers)} DATA_TRANSFER records")
    di = 0
    for rec in audit:
        d = rec.details
        if rec.event == "ENROLL":
            members[d["member_id"]] = True
        elif rec.event == "REVOKE" and d.get("kind") == "member":
            members[d["member_id"]] = False
        elif rec.event == "OFFER":
            offers[d["offer_id"]] = d["policy"]
        elif rec.event == "REQUEST":
            contracts[d["contract_id"]] = {"policy": offers[d["offer_id"]], "consumer": d["consumer_id"],
                                           "state": d["to"]}
        elif rec.event in ("DECISION", "COUNTERSIGN", "REVOKE", "EXPIRE"):
            if d["contract_id"] in contracts:
                contracts[d["contract_id"]]["state"] = d["to"]
            elif d["contract_id"] in offers and d["to"] in ("REVOKED", "EXPIRED"):
                pass  # the catalog template itself
        elif rec.event == "DATA_TRANSFER":
            if di >= len(deliveries):
                break
            actor, now, cid, records = deliveries[di]
            di += 1
            c = contracts.get(cid)
            where = f"transfer #{di} ({actor} on {cid} at {now})"
            if not members.get(actor, False):
                problems.append(f"{where}: recipient not an active member")
            if c is None or c["state"] != "ACTIVE":
                problems.append(f"{where}: contract not ACTIVE")
                continue
            if c["consumer"] != actor:
                problems.append(f"{where}: recipient is not the contract consumer")
            pol = c["policy"]
            if now >= pol["expires_at"]:
                problems.append(f"{where}: after policy expiry")
            pa, pb = pol["time_window"]
            box = pol["spatial_scope"]
            audited = sorted(tuple(x[:2]) for x in d["records"])
            if audited != sorted((r["device_id"], r["frame_counter"]) for r in records):
                problems.append(f"{where}: delivered records differ from the audit entry")
            for r in records:
                if not pa <= r["timestamp_s"] <= pb:
                    problems.append(f"{where}: record ts {r['timestamp_s']} outside window")
                if box and not (box["lat_min"] <= r["lat"] <= box["lat_max"]
                                and box["lon_min"] <= r["lon"] <= box["lon_max"]):
                    problems.append(f"{where}: record outside spatial scope")
    return problems


def test_1_sovereignty_suite(criterion):
    criterion["name"] = "1 sovereignty suite (50 randomized scenarios)"
    t0 = time.perf_counter()
    problems, n_transfers, n_records, n_denials = [], 0, 0, 0
    for seed in range(50):
        cfg = parse_config(random_scenario(1000 + seed))
        runner = Runner(cfg)
        deliveries = _capture(runner)
        result = runner.run()
        problems += [f"seed {1000 + seed}: {p}" for p in _brute_force_check(result.audit, deliveries)]
        problems += [f"seed {1000 + seed}: {v}" for v in result.report["audit"]["sovereignty_violations"]]
        n_transfers += len(deliveries)
        n_records += sum(len(d[3]) for d in deliveries)
        n_denials += sum(1 for r in result.audit if r.event == "POLICY_DENY")
    elapsed = time.perf_counter() - t0
    criterion["detail"] = (f"{n_transfers} transfers, {n_records} records, {n_denials} denials, "
                           f"{len(problems)} violations, {elapsed:.1f}s")
    assert n_transfers > 0 and n_denials > 0  # the suite must exercise both outcomes
    assert problems == []
    assert elapsed < 60


# ------------------------------------------------------------------ 2

def test_2_certification_gate(criterion):
    criterion["name"] = "2 certification gate (1000 attempts)"
    rng = random.Random(2)
    approved = {"cert-a", "cert-b", "cert-c"}
    ds = DataSpace(approved, rng=random.Random(0))
    bad = typed = good = 0
    for i in range(1000):
        now = 1_700_000_000 + rng.randrange(10**6)
        cert_id = rng.choice(sorted(approved) + ["cert-x", "cert-A", "", "cert-a "])
        until = now + rng.randint(-3600, 3600)
        cert = ConnectorCertificate(cert_id, "h", "ca", until)
        expect_ok = cert_id in approved and now < until
        via_message = rng.random() < 0.5
        mid = f"m{i}"
        if via_message:
            env = make_envelope(mid, "ENROLL", {"member_id": mid, "role": "consumer",
                                                "certificate": cert.to_dict()}, rng)
            reply = ds.handle(env, now)
            err = reply.body.get("error") if reply.msg_type == "ERROR" else None
        else:
            try:
                ds.enroll(mid, "", "consumer", cert, now)
                err = None
            except (CertificateNotApproved, CertificateExpired) as e:
                err = type(e).__name__
        if expect_ok:
            good += err is None
        else:
            bad += 1
            want = "CertificateNotApproved" if cert_id not in approved else "CertificateExpired"
            typed += err == want
    criterion["detail"] = f"{typed}/{bad} invalid rejected with typed error, {good}/{1000 - bad} valid accepted"
    assert typed == bad and good == 1000 - bad and bad > 0


# ------------------------------------------------------------------ 3

def _small_world(rng):
    store = ProviderStore()
    store.register_sensor(SensorRegistration(1, 47.0, 16.0, 100.0, "", "fld"))
    T = 1_000_000
    store.ingest(IngestionBatch("gw", T, tuple(
        AnnotatedFrame(with_crc(UplinkFrame(1, k, T + 60 * k, 0)), -70) for k in range(1, 30))))
    ds = DataSpace({"c"}, rng=rng)
    ds.attach_store("prov", store)
    cert = ConnectorCertificate("c", "h", "ca", T + 10**7)
    ds.enroll("prov", "", "provider", cert, T)
    ds.enroll("cons", "", "consumer", cert, T)
    return ds, T


def test_3_agreement_gate(criterion):
    criterion["name"] = "3 agreement gate (AGREED never transfers)"
    rng = random.Random(3)
    ds, T = _small_world(rng)
    denied = total = 0
    for i in range(300):
        pol = UsagePolicy(f"p{i}", (T, T + 3600), rng.randint(1, 10), T + 10**6,
                          rng.choice([None, BBox(46.9, 47.1, 15.9, 16.1)]))
        offer = ds.publish_offer("prov", "fld", pol, T)
        c = ds.request_contract("cons", offer.contract_id, T)
        ds.transition(c.contract_id, NegotiationEvent.PROVIDER_ACCEPT, "prov", T)
        a = T + rng.randrange(0, 1800)
        body = {"contract_id": c.contract_id, "window": [a, a + rng.randrange(0, 1800)]}
        env = sign_envelope(make_envelope("cons", "DATA_REQUEST", body, rng), ds.key_for("cons"))
        reply = ds.handle(env, T + rng.randrange(1, 3600))
        total += 1
        denied += reply.msg_type == "ERROR" and reply.body["error"] == "ContractNotActive"
    criterion["detail"] = f"{denied}/{total} denied with ContractNotActive"
    assert denied == total


# ------------------------------------------------------------------ 4

def test_4_replay_exactly_once(criterion, corner_frost_path):
    criterion["name"] = "4 exactly-once under 20% duplication"
    doc = json.loads(corner_frost_path.read_text())
    checked = []
    for seed in (7, 8, 9):
        clean = dict(doc, seed=seed)
        dup = json.loads(json.dumps(clean))
        dup["simulation"] = {"duplicate_fraction": 0.2, "replay_delay_s": 2}
        r_clean, r_dup = Runner(parse_config(clean)), Runner(parse_config(dup))
        r_clean.run()
        rep_dup = r_dup.run().report
        recs = r_dup.transport.store.all_records()
        idents = [r.identity for r in recs]
        assert len(idents) == len(set(idents))
        assert [r.content() for r in recs] == [r.content() for r in r_clean.transport.store.all_records()]
        assert rep_dup["gateway"]["replay"] > 0
        checked.append((len(recs), rep_dup["gateway"]["replay"]))
    criterion["detail"] = "records/replays dropped per seed: " + ", ".join(f"{a}/{b}" for a, b in checked)


# ------------------------------------------------------------------ 5

def test_5_codec_suite(criterion):
    criterion["name"] = "5 codec suite"
    rng = random.Random(5)
    n = 12_000
    for _ in range(n):
        f = UplinkFrame(rng.getrandbits(64), rng.getrandbits(32), rng.getrandbits(64),
                        rng.randint(-32768, 32767), rng.randint(0, 100))
        raw = encode_frame(f)
        back = decode_frame(raw)
        assert replace(back, crc=0) == f and encode_frame(back) == raw
    assert crc16_ccitt_false(b"123456789") == 0x29B1
    vec = "f7bc83f430538424b13298e6aa6fb143ef4d59a14946175997479dbc2d1a3cd8"
    msg = b"The quick brown fox jumps over the lazy dog"
    assert hmac_sha256_hex(b"key", msg) == vec == hmac.new(b"key", msg, hashlib.sha256).hexdigest()
    fixed = encode_frame(UplinkFrame(0x0102030405060708, 42, 1713834000, -525, 87))
    rejected = 0
    for bit in range(len(fixed) * 8):
        buf = bytearray(fixed)
        buf[bit // 8] ^= 1 << (bit % 8)
        try:
            decode_frame(bytes(buf))
        except (FrameCorrupt, FrameMalformed):
            rejected += 1
    criterion["detail"] = f"{n} round-trips, 0x29B1 ok, HMAC ok, {rejected}/{len(fixed) * 8} bit flips rejected"
    assert rejected == len(fixed) * 8


# ------------------------------------------------------------------ 6

def _oracle_idw(qx, qy, rs, p, eps):
    near = sorted((math.hypot(r.x - qx, r.y - qy), r.device_id, r.temp_c) for r in rs)
    if near[0][0] < eps:
        return near[0][2]
    ws = [math.hypot(r.x - qx, r.y - qy) ** -p for r in rs]
    return sum(w * r.temp_c for w, r in zip(ws, rs)) / sum(ws)


def test_6_interpolation_oracle(criterion):
    criterion["name"] = "6 interpolation oracle (200 grids)"
    rng = random.Random(6)
    cells = mismatches = bound_fail = 0
    for _ in range(200):
        rows, cols = rng.randint(1, 16), rng.randint(1, 16)
        size = rng.choice([1.0, 5.0, 10.0])
        grid = GridSpec(rows, cols, size, (47.8, 16.5))
        cfg = FrostConfig(critical_temp_c=0.0, idw_power=rng.choice([1.0, 2.0, 3.0]))
        n = rng.randint(1, 5)
        rs = []
        for dev in rng.sample(range(1, 50), n):
            if rng.random() < 0.3:  # exactly on a cell centre
                x, y = grid.cell_xy(rng.randrange(rows), rng.randrange(cols))
            else:
                x, y = rng.uniform(-size, cols * size), rng.uniform(-size, rows * size)
            rs.append(Reading(x, y, rng.uniform(-8, 8), dev))
        snap = field_snapshot(grid, rs, cfg)
        lo, hi = min(r.temp_c for r in rs), max(r.temp_c for r in rs)
        for r in range(rows):
            for c in range(cols):
                cells += 1
                want = _oracle_idw(c * size, r * size, rs, cfg.idw_power, cfg.snap_epsilon_m)
                mismatches += snap[r, c] != want
                bound_fail += not (lo - 1e-12 <= snap[r, c] <= hi + 1e-12)
    hand = idw_interpolate((0.0, 0.0), [Reading(1.0, 0.0, 0.0, 1), Reading(0.0, 2.0, 3.0, 2)],
                           FrostConfig(critical_temp_c=0.0))
    criterion["detail"] = f"{cells} cells, {mismatches} mismatches, {bound_fail} bound failures, hand={hand!r}"
    assert mismatches == 0 and bound_fail == 0
    assert hand == 0.6


# ------------------------------------------------------------------ 7

def test_7_localization(criterion, corner_frost_path, control_path):
    criterion["name"] = "7 localization (corner frost vs control)"
    rep = Runner(load_config(corner_frost_path)).run().report
    ctl = Runner(load_config(control_path)).run().report
    assert rep["alerts"], "corner-frost scenario produced no alert"
    alert = rep["alerts"][-1]
    cells = {tuple(c) for z in alert["zones"] for c in z["cells"]}
    far_corner_excluded = all(not (z["bbox"][2] >= 11 and z["bbox"][3] >= 11) for z in alert["zones"])
    criterion["detail"] = (f"coverage={alert['coverage_fraction']:.3f}, zones={len(alert['zones'])}, "
                           f"(11,11) excluded={far_corner_excluded}, control alerts={len(ctl['alerts'])}")
    assert alert["coverage_fraction"] < 0.5
    assert (11, 11) not in cells and far_corner_excluded
    assert ctl["alerts"] == []


# ------------------------------------------------------------------ 8

def _mutate(rec, rng):
    kind = rng.choice(["at", "actor", "event", "details", "chain_hash", "seq"])
    if kind == "at":
        return replace(rec, at=rec.at + rng.choice([-1, 1, 3600]))
    if kind == "actor":
        return replace(rec, actor=rec.actor + "~")
    if kind == "event":
        return replace(rec, event="REVOKE" if rec.event != "REVOKE" else "ENROLL")
    if kind == "details":
        return replace(rec, details=dict(rec.details, tampered=rng.randrange(10**6)))
    if kind == "seq":
        return replace(rec, seq=rec.seq + 1)
    h = bytearray(bytes.fromhex(rec.chain_hash))
    h[rng.randrange(32)] ^= 1 << rng.randrange(8)
    return replace(rec, chain_hash=h.hex())


def test_8_determinism_and_tamper_evidence(criterion, corner_frost_path, tmp_path):
    criterion["name"] = "8 determinism, verify, 100 audit mutations"
    cfg = load_config(corner_frost_path)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(cfg, a)
    run(cfg, b)
    identical = a.read_bytes() == b.read_bytes()
    audit_path = tmp_path / "a.json.audit.jsonl"
    cli = subprocess.run([sys.executable, "-m", "orvicon.cli", "verify", "--report", str(a),
                          "--audit", str(audit_path)], capture_output=True, text=True)
    records = read_audit(audit_path)
    rng = random.Random(8)
    detected = 0
    trials = 100
    for i in range(trials):
        recs = list(records)
        if i % 10 == 9:  # deletion
            del recs[rng.randrange(len(recs))]
        else:
            j = rng.randrange(len(recs))
            recs[j] = _mutate(recs[j], rng)
        p = tmp_path / f"m{i}.jsonl"
        write_audit(p, recs)
        detected += bool(verify(a, p))
    criterion["detail"] = (f"byte-identical={identical}, verify exit={cli.returncode}, "
                           f"{detected}/{trials} mutations detected")
    assert identical and report_bytes(json.loads(a.read_text())) == a.read_bytes()
    assert cli.returncode == 0, cli.stdout + cli.stderr
    assert detected == trials


# ------------------------------------------------------------------ 9

def test_9_rate_limit_burst(criterion):
    criterion["name"] = "9 rate limit (3/h, burst of 10)"
    rng = random.Random(9)
    ds, T = _small_world(rng)
    pol = UsagePolicy("p-rate", (T, T + 3600), 3, T + 10**6)
    offer = ds.publish_offer("prov", "fld", pol, T)
    c = ds.request_contract("cons", offer.contract_id, T)
    ds.transition(c.contract_id, NegotiationEvent.PROVIDER_ACCEPT, "prov", T)
    ds.transition(c.contract_id, NegotiationEvent.CONSUMER_COUNTERSIGN, "cons", T)
    allowed = []
    t = T + 100
    for k in range(10):
        env = sign_envelope(make_envelope("cons", "DATA_REQUEST",
                                          {"contract_id": c.contract_id, "window": [T, T + 60]}, rng),
                            ds.key_for("cons"))
        now = t + k
        if ds.handle(env, now).msg_type == "DATA_RESPONSE":
            allowed.append(now)
    worst = max(sum(1 for u in allowed if s - 3600 < u <= s) for s in range(T, T + 7200))
    criterion["detail"] = f"{len(allowed)} allowed, max {worst} in any trailing 3600 s"
    assert len(allowed) == 3 and worst == 3


# ------------------------------------------------------------------ 10

def test_10_net_mode_latency(criterion, corner_frost_path):
    criterion["name"] = "10 --net end-to-end under 30 s"
    cfg = load_config(corner_frost_path)
    t0 = time.perf_counter()
    rep = Runner(cfg, net=True).run().report
    elapsed = time.perf_counter() - t0
    sensors = len(cfg.scenario.sensors)
    hours = (cfg.end_s - cfg.start_s) / 3600
    criterion["detail"] = f"{sensors} sensors, {hours:.1f} simulated h, {elapsed:.2f}s wall, mode={rep['mode']}"
    assert sensors == 9 and hours == 2 and rep["mode"] == "net"
    assert rep["audit"]["verification"] == "ok"
    assert elapsed < 30
