#!/usr/bin/env python3
"""Run the full experiment bundle (bounds, attack, leakage, utility sweeps).

Writes four CSV reports plus a MANIFEST.json with config hash, stage log,
and file checksums into --out. Reruns with the same config are
byte-identical apart from the manifest timestamp.

Example:
    python3 scripts/run_sweep.py --out runs/demo --seed 1 \
        --epsilons 0.5 1 2 --n-users 500 --size 128
"""

import argparse
import dataclasses

from reidrisk import ExperimentConfig, run_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--config", default=None, help="experiment config JSON")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--n-users", type=int, default=None)
    ap.add_argument("--size", type=int, default=None)
    ap.add_argument("--epsilons", type=float, nargs="+", default=None)
    ap.add_argument("--knowledge", choices=["partial", "max"], default=None)
    ap.add_argument("--reid-trials", type=int, default=None)
    ap.add_argument("--pse-trials", type=int, default=None)
    args = ap.parse_args()

    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else ExperimentConfig())
    overrides = {k: getattr(args, k) for k in
                 ("seed", "threads", "n_users", "size", "epsilons",
                  "knowledge", "reid_trials", "pse_trials")
                 if getattr(args, k) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    result = run_experiment(cfg, args.out)
    print(f"config {result.manifest['config_hash']} -> {result.out_dir}")
    for name, digest in sorted(result.files.items()):
        print(f"  {name}  sha256:{digest[:16]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
