"""Run the bundled corner-frost and control scenarios and print the zone maps.

    python scripts/run_reference.py [--net] [--out-dir runs/]
"""

import argparse
from importlib import resources
from pathlib import Path

from orvicon.config import load_config
from orvicon.frost import render_zones
from orvicon.harness import run


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--net", action="store_true")
    ap.add_argument("--out-dir", default="runs")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("corner_frost", "no_frost_control", "adversarial"):
        cfg = load_config(resources.files("orvicon") / "scenarios" / f"{name}.json")
        res = run(cfg, out / f"{name}.json", net=args.net)
        rep = res.report
        print(f"== {name} ({rep['mode']})")
        print(f"   frames accepted {rep['gateway']['accepted']}, replays dropped {rep['gateway']['replay']}, "
              f"transfers {rep['transfers']['count']}, audit records {rep['audit']['records']}")
        errors = sorted({a['error'] for a in rep['actions'] if not a.get('ok')})
        if errors:
            print(f"   refused: {', '.join(errors)}")
        if rep["alerts"]:
            a = rep["alerts"][-1]
            print(f"   alert at {a['at']}: coverage {a['coverage_fraction']:.3f}, min {a['min_temp_c']:.2f} C")
        else:
            print("   no alert")
        if res.last_snapshot is not None:
            print("   " + render_zones(res.last_snapshot, res.last_zones).replace("\n", "\n   "))


if __name__ == "__main__":
    main()
