"""False-positive rates of the hybrid cascade and its two single-signal
baselines on a seeded population of legitimate users.

    python scripts/compare_detectors.py --users 500 --days 60
"""

import argparse
import json
import time

from hybridfraud.config import EngineConfig
from hybridfraud.simulator import DEFAULT_POPULATION_SEED, compare_detectors, make_population


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--days", type=int, default=60)
    ap.add_argument("--seed", type=int, default=DEFAULT_POPULATION_SEED)
    ap.add_argument("--t1", type=float, default=25.0)
    ap.add_argument("--t2", type=float, default=75.0)
    ap.add_argument("--out", help="write the full comparison as JSON")
    args = ap.parse_args()

    cfg = EngineConfig().with_overrides(t1=args.t1, t2=args.t2)
    start = time.perf_counter()
    cmp = compare_detectors(make_population(args.users, args.seed), cfg, args.days)
    for policy, rate in cmp.fpr.items():
        print(f"{policy:<12} FPR {rate:.6f}  ({cmp.n_false_positive[policy]}/{cmp.n_legit[policy]})")
    worse = sum(h > m for h, m in zip(cmp.per_user_fp["hybrid"], cmp.per_user_fp["mobile_only"]))
    print(f"users where hybrid is worse than mobile-only: {worse}")
    print(f"elapsed {time.perf_counter() - start:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(cmp.to_dict(), fh, indent=2)


if __name__ == "__main__":
    main()
