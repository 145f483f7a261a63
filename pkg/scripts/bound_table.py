#!/usr/bin/env python3
"""Print the closed-form identity-disclosure bounds over a grid of budgets.

Example:
    python3 scripts/bound_table.py --n 1370637 --size 10500393 \
        --epsilons 0.1 1 10 --g 16
"""

import argparse

from reidrisk import bound_report


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, required=True, help="population size")
    ap.add_argument("--size", type=int, required=True, help="alphabet size")
    ap.add_argument("--epsilons", type=float, nargs="+",
                    default=[0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
    ap.add_argument("--g", type=int, default=None, help="hash bucket count")
    ap.add_argument("--t", type=int, default=1, help="independent releases")
    ap.add_argument("--beta-min", type=float, default=None,
                    help="target floor on attacker error")
    args = ap.parse_args()

    header = ["epsilon", "theta_rr", "alpha_ldp", "alpha_rr", "fano_ldp", "fano_rr"]
    if args.g is not None:
        header += ["alpha_glh", "fano_glh"]
    print("  ".join(f"{h:>12}" for h in header))
    for eps in args.epsilons:
        rep = bound_report(n=args.n, size=args.size, epsilon=eps, g=args.g,
                           t=args.t, beta_min=args.beta_min)
        row = [eps, rep.theta_rr, rep.alpha_ldp, rep.alpha_rr,
               rep.fano["ldp"]["value"], rep.fano["rr"]["value"]]
        if args.g is not None:
            row += [rep.alpha_glh, rep.fano["glh"]["value"]]
        print("  ".join(f"{v:>12.6g}" for v in row))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
