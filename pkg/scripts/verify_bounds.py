#!/usr/bin/env python3
"""Brute-force every shipped inequality on random small instances.

Enumerates exact mutual information, Bayes error, and score-level
information on populations small enough to compute in closed form, and
checks each closed-form cap and lower bound against them. Exits 1 if any
instance violates any bound.

Example:
    python3 scripts/verify_bounds.py --count 1000 --seed 7
"""

import argparse
import json

from reidrisk import verify_bound_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=500,
                    help="number of random instances")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="emit the full report")
    args = ap.parse_args()

    report = verify_bound_suite(args.count, args.seed)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(f"instances: {report.instances_checked}  "
              f"checks: {report.checks_run}  "
              f"violations: {len(report.violations)}")
        for v in report.violations:
            print(f"  instance {v.instance_index}: {v.check} "
                  f"lhs={v.lhs!r} rhs={v.rhs!r}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
