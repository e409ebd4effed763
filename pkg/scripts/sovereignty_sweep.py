"""Randomized adversarial sweep; prints one line per scenario and a total.

    python scripts/sovereignty_sweep.py --n 200 --first-seed 1000
"""

import argparse
import time
from collections import Counter

from orvicon.config import parse_config
from orvicon.harness import Runner
from orvicon.scenario_gen import random_scenario


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--first-seed", type=int, default=1000)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    t0 = time.perf_counter()
    totals: Counter = Counter()
    reasons: Counter = Counter()
    for seed in range(args.first_seed, args.first_seed + args.n):
        rep = Runner(parse_config(random_scenario(seed))).run().report
        v = rep["audit"]["sovereignty_violations"]
        n_recs = sum(rep["transfers"]["records_by_actor"].values())
        totals.update(transfers=rep["transfers"]["count"], records=n_recs, violations=len(v))
        for counts in rep["policies"].values():
            reasons.update({k: n for k, n in counts.items() if k.startswith("deny:")})
        if not args.quiet:
            print(f"seed {seed}: transfers {rep['transfers']['count']:3d}  records {n_recs:4d}  "
                  f"violations {len(v)}")
        for line in v:
            print(f"   {line}")
    dt = time.perf_counter() - t0
    print(f"\n{args.n} scenarios in {dt:.1f}s: {totals['transfers']} transfers, "
          f"{totals['records']} records, {totals['violations']} violations")
    for k, n in reasons.most_common():
        print(f"  {k[5:]:<20} {n}")


if __name__ == "__main__":
    main()
