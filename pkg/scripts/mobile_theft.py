"""Daily scores for the one-week call/SMS user after the phone goes silent.

    python scripts/mobile_theft.py --days 10 [--csv out.csv]
"""

import argparse

from hybridfraud.simulator import mobile_theft_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=10, help="silent days to simulate")
    ap.add_argument("--csv", help="also write the trajectory here")
    args = ap.parse_args()

    run = mobile_theft_trajectory(args.days)
    print(f"{'day':>4} {'calls':>8} {'sms':>8} {'aggregate':>10}  {'case':<14} verdict")
    for r in run.metrics.trajectory:
        if r["status"] != "decided":
            continue
        print(
            f"{r['day']:>4} {r['score_calls']:>8.3f} {r['score_sms']:>8.3f} {r['aggregate']:>10.3f}"
            f"  {r['case']:<14} {r['verdict']}"
        )
    if args.csv:
        run.metrics.write_csv(args.csv)


if __name__ == "__main__":
    main()
