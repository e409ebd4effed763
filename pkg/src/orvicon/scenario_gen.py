"""Randomized scenario documents for sweep testing.

Every document is a valid schema_version-1 config. Scripts mix honest
negotiation with adversarial moves: unenrolled senders, unapproved or
expired certificates, forged signatures, out-of-order protocol steps,
member revocation mid-run, windows and boxes outside the policy, bursts.
"""

from __future__ import annotations

import random
from typing import Any

from .geo import cell_center

START = 1_713_834_000
CERT_OK = ["cert-conn-a", "cert-conn-b", "cert-gw"]


def _cert(cid: str, until: int) -> dict[str, Any]:
    return {"cert_id": cid, "connector_build_hash": "0badc0de", "issued_by": "testbed-ca",
            "valid_until": until}


def random_scenario(seed: int, *, duration_s: int | None = None) -> dict[str, Any]:
    rng = random.Random(seed)
    S = START + rng.randrange(0, 86400, 60)
    dur = duration_s or rng.choice([2400, 3600, 5400])
    E = S + dur
    rows, cols = rng.randint(3, 8), rng.randint(3, 8)
    cell = rng.choice([5.0, 10.0, 20.0])
    origin = (47.8 + rng.random() * 0.1, 16.5 + rng.random() * 0.1)
    n_sensors = rng.randint(2, 6)
    cells = rng.sample([(r, c) for r in range(rows) for c in range(cols)], n_sensors)
    sensors = [{"device_id": 100 + i, "cell": list(rc), "report_period_s": rng.choice([300, 600, 900]),
                "phase_s": S + rng.randrange(0, 300), "registered": rng.random() > 0.1}
               for i, rc in enumerate(cells)]

    def rand_bbox(shrink: bool) -> dict[str, float]:
        (r0, r1), (c0, c1) = sorted(rng.sample(range(rows), 2) if rows > 1 else (0, 0)), \
            sorted(rng.sample(range(cols), 2) if cols > 1 else (0, 0))
        lo = cell_center(origin, cell, r0, c0)
        hi = cell_center(origin, cell, r1, c1)
        pad = 0.0 if shrink else 1e-5
        return {"lat_min": lo[0] - pad, "lat_max": hi[0] + pad,
                "lon_min": lo[1] - pad, "lon_max": hi[1] + pad}

    offers = []
    for k in range(rng.randint(1, 3)):
        a = S + rng.randrange(0, dur // 2)
        b = a + rng.randrange(600, dur)
        offers.append({"label": f"o{k}", "provider": "prov", "dataset_id": "f1", "publish_at": S,
                       "policy": {"policy_id": f"p{k}", "time_window": [a, b],
                                  "max_requests_per_hour": rng.randint(1, 4),
                                  "expires_at": S + rng.randrange(dur // 2, dur + 1800),
                                  "spatial_scope": rand_bbox(False) if rng.random() < 0.5 else None}})

    consumers = [f"cons{i}" for i in range(rng.randint(1, 3))]
    members = [
        {"member_id": "prov", "role": "provider", "certificate": _cert(CERT_OK[0], E + 86400), "enroll_at": S},
        {"member_id": "gw", "role": "gateway", "certificate": _cert(CERT_OK[2], E + 86400), "enroll_at": S},
    ]
    for i, c in enumerate(consumers):
        roll = rng.random() if i else 0.0  # cons0 always enrols properly
        if roll < 0.7:
            members.append({"member_id": c, "role": "consumer",
                            "certificate": _cert(CERT_OK[1], E + 86400), "enroll_at": S + rng.randrange(0, 120)})
        elif roll < 0.85:
            members.append({"member_id": c, "role": "consumer",
                            "certificate": _cert(CERT_OK[1], S - 1), "enroll_at": S})
        else:
            members.append({"member_id": c, "role": "consumer",
                            "certificate": _cert("cert-rogue", E + 86400), "enroll_at": S})

    script: list[dict[str, Any]] = []
    t = S + 150
    actors = consumers + ["mallory"]
    labels: list[tuple[str, str, dict]] = []
    for i in range(rng.randint(2, 5)):
        who = rng.choice(actors) if rng.random() < 0.3 else rng.choice(consumers)
        label = f"k{i}"
        offer = rng.choice(offers)
        script.append({"at": t, "actor": who, "action": "request_contract", "offer": offer["label"],
                       "as": label})
        labels.append((label, who, offer["policy"]))
        t += rng.randint(1, 30)
        if rng.random() < 0.2:  # premature countersign
            script.append({"at": t, "actor": who, "action": "countersign", "contract": label})
            t += 1
        if rng.random() < 0.3:  # premature data request
            script.append({"at": t, "actor": who, "action": "data_request", "contract": label, "window_s": 300})
            t += 1
        script.append({"at": t, "actor": "prov",
                       "action": "accept" if rng.random() < 0.8 else "reject", "contract": label})
        t += rng.randint(1, 30)
        if rng.random() < 0.85:
            signer = who if rng.random() < 0.9 else rng.choice(actors)
            script.append({"at": t, "actor": signer, "action": "countersign", "contract": label})
            t += rng.randint(1, 30)

    n_req = rng.randint(5, 25)
    for _ in range(n_req):
        at = rng.randrange(t, E + 1)
        label, owner, pol = rng.choice(labels)
        who = owner if rng.random() < 0.8 else rng.choice(actors)
        step: dict[str, Any] = {"at": at, "actor": who, "action": "data_request", "contract": label}
        roll = rng.random()
        pa, pb = pol["time_window"]
        if roll < 0.5 and pa <= at:  # compliant window over data that already exists
            hi = min(pb, at)
            a = pa + rng.randrange(0, (hi - pa) // 2 + 1)
            step["window"] = [a, hi]
        elif roll < 0.7:
            step["window_s"] = rng.choice([300, 600, 1800, 3600])
        else:
            a = rng.randrange(S - 600, E)
            step["window"] = [a, a + rng.randrange(0, dur)]
        if rng.random() < 0.3:
            step["bbox"] = rand_bbox(rng.random() < 0.7)
        if rng.random() < 0.1:
            step["forge"] = True
        step["analyze"] = rng.random() < 0.2
        script.append(step)
        if rng.random() < 0.3:  # burst
            for j in range(rng.randint(2, 6)):
                script.append(dict(step, at=min(E, at + j + 1)))
    if rng.random() < 0.5:
        victim = rng.choice(consumers)
        script.append({"at": rng.randrange(t, E), "actor": "operator", "action": "revoke_member",
                       "member": victim})
    if rng.random() < 0.4:
        label = rng.choice(labels)[0]
        script.append({"at": rng.randrange(t, E), "actor": "prov", "action": "revoke_contract",
                       "contract": label})
    if rng.random() < 0.2:
        script.append({"at": rng.randrange(S + 200, E), "actor": "mallory", "action": "enroll",
                       "role": "consumer", "certificate": _cert("cert-homebrew", E + 86400)})
    # labels must be bound by an earlier request in file order; keep that order for equal times
    order = {id(s): i for i, s in enumerate(script)}
    script.sort(key=lambda s: (s["at"], order[id(s)]))

    return {
        "schema_version": 1,
        "name": f"random-{seed}",
        "seed": seed,
        "clock": {"start_s": S, "end_s": E, "tick_s": 1},
        "field": {"field_id": "f1", "rows": rows, "cols": cols, "cell_size_m": cell,
                  "origin": list(origin),
                  "elevation": {"base_m": 100.0, "gradient_row_m": rng.uniform(-2, 2),
                                "gradient_col_m": rng.uniform(-2, 2)},
                  "climate": {"t_mean_c": rng.uniform(-2, 8), "diurnal_amp_c": rng.uniform(0, 6),
                              "t_peak_s": 50400, "noise_sigma_c": rng.uniform(0, 0.5)},
                  "frost_events": [{"start_s": S, "end_s": E, "cooling_rate_c_per_h": rng.uniform(0, 2),
                                    "pooling_gain": rng.uniform(0, 3)}] if rng.random() < 0.6 else []},
        "sensors": sensors,
        "simulation": {"duplicate_fraction": rng.choice([0.0, 0.2]), "replay_delay_s": rng.randint(0, 700)},
        "gateway": {"member_id": "gw", "lat": origin[0], "lon": origin[1]},
        "approved_certs": CERT_OK,
        "members": members,
        "offers": offers,
        "script": script,
        "frost": {"critical_temp_c": rng.uniform(-3, 1)},
    }
