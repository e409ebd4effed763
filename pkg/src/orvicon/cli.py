"""``orvicon`` command line."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigInvalid, load_config
from .frost import render_zones, snapshot_csv
from .harness import default_audit_path, run, verify
from .provider import DuplicateDevice, ProviderStore, SensorRegistration, inspect_store

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.scenario, seed=args.seed)
    except ConfigInvalid as e:
        for d in e.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(cfg, args.out, args.audit, net=args.net, store_dir=args.store)
    rep = result.report
    print(f"report: {args.out}  audit: {args.audit or default_audit_path(args.out)}")
    print(f"transfers: {rep['transfers']['count']}  alerts: {len(rep['alerts'])}  "
          f"audit: {rep['audit']['verification']}  digest: {rep['digest'][:16]}")
    if args.csv and result.last_snapshot is not None:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(snapshot_csv(result.last_snapshot))
    if args.map and result.last_snapshot is not None:
        print(render_zones(result.last_snapshot, result.last_zones))
    ok = rep["audit"]["verification"] == "ok" and not rep["audit"]["sovereignty_violations"]
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_verify(args) -> int:
    diags = verify(args.report, args.audit)
    if diags:
        for d in diags:
            print(f"FAIL {d}")
        return EXIT_VERIFY
    print("ok")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    try:
        print(json.dumps(inspect_store(args.store), indent=2, sort_keys=True))
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _cmd_register(args) -> int:
    try:
        reg = SensorRegistration(args.device_id, args.lat, args.lon, args.elevation,
                                 args.label, args.field)
        status = ProviderStore(args.store).register_sensor(reg, args.description)
    except (ValueError, DuplicateDevice) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(status)
    return EXIT_OK


def _cmd_list(args) -> int:
    for ds in ProviderStore(args.store).list_datasets():
        print(json.dumps(ds.to_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_reconcile(args) -> int:
    print(json.dumps(ProviderStore(args.store).reconcile_quarantine(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orvicon", description="orchard frost data-space testbed")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write a report")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--net", action="store_true", help="provider + data space in a child process over loopback")
    r.add_argument("--out", required=True)
    r.add_argument("--audit", help="audit log path (default: <out>.audit.jsonl)")
    r.add_argument("--store", help="persist the provider store in this directory")
    r.add_argument("--csv", help="write the last field snapshot as CSV")
    r.add_argument("--map", action="store_true", help="print a character map of the last zones")
    r.set_defaults(fn=_cmd_run)

    v = sub.add_parser("verify", help="check report digest, audit chain and sovereignty")
    v.add_argument("--report", required=True)
    v.add_argument("--audit", required=True)
    v.set_defaults(fn=_cmd_verify)

    i = sub.add_parser("inspect-store", help="summarize a provider store directory")
    i.add_argument("store")
    i.set_defaults(fn=_cmd_inspect)

    g = sub.add_parser("register-sensor", help="register a sensor's coordinates")
    g.add_argument("--store", required=True)
    g.add_argument("--device-id", type=int, required=True)
    g.add_argument("--lat", type=float, required=True)
    g.add_argument("--lon", type=float, required=True)
    g.add_argument("--elevation", type=float, default=0.0)
    g.add_argument("--label", default="")
    g.add_argument("--field", default="field-1")
    g.add_argument("--description")
    g.set_defaults(fn=_cmd_register)

    ld = sub.add_parser("list-datasets", help="list datasets in a provider store")
    ld.add_argument("--store", required=True)
    ld.set_defaults(fn=_cmd_list)

    rq = sub.add_parser("reconcile-quarantine", help="move quarantined frames of registered devices")
    rq.add_argument("--store", required=True)
    rq.set_defaults(fn=_cmd_reconcile)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
