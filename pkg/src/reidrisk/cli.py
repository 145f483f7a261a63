"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 oracle violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import bounds, estimation, oracle, pse, reid
from .mechanisms import (GeneralLocalHash, GlhBatch, RandomizedResponse,
                         glh_sample_batch, read_records, rr_sample_batch,
                         write_records)
from .pipeline import (DataError, ExperimentConfig, PipelineError,
                       SynthesisSpec, _probe_population, run_experiment,
                       split_traces, synth_population, write_synth_checkins)
from .probcore import make_rng, spawn_streams


class UsageError(Exception):
    """Bad flag combination detected after parsing; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base RNG seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="experiment config JSON")

    top = _Parser(prog="reidrisk",
                  description="re-identification risk toolkit for locally "
                              "obfuscated categorical data")
    sub = top.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", parents=[common],
                       help="closed-form information and error bounds")
    p.add_argument("--n", type=int, required=True, help="population size")
    p.add_argument("--size", type=int, required=True, help="alphabet size")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--theta", type=float, default=None,
                   help="information shrink factor instead of epsilon")
    p.add_argument("--g", type=int, default=None, help="hash bucket count")
    p.add_argument("--t", type=int, default=1, help="independent releases")
    p.add_argument("--beta-min", type=float, default=None,
                   help="target floor on attacker error")
    p.add_argument("--row", action="store_true", help="also print a table row")

    p = sub.add_parser("obfuscate", parents=[common],
                       help="obfuscate a user_idx,x CSV into a record CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--mechanism", choices=["rr", "glh"], required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--g", type=int, default=None)

    p = sub.add_parser("estimate", parents=[common],
                       help="estimate the symbol distribution from records")
    p.add_argument("--records", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--g", type=int, default=None,
                   help="bucket count; inferred from GLH records")
    p.add_argument("--threshold-level", type=float, default=0.05)
    p.add_argument("--no-threshold", action="store_true")
    p.add_argument("--truth", default=None, help="optional symbol,p_true CSV")

    p = sub.add_parser("reid", parents=[common],
                       help="profile-matching attack on a synthetic population")
    p.add_argument("--mechanism", choices=["rr", "glh", "none"], default="rr")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--g", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--knowledge", choices=["partial", "max"], default=None)

    p = sub.add_parser("pse", parents=[common],
                       help="score-level identity leakage in bits")
    p.add_argument("--scores", default=None,
                   help="label,score CSV with labels g/i; otherwise simulate")
    p.add_argument("--mechanism", choices=["rr", "glh", "none"], default="rr")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--g", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="neighbor order")
    p.add_argument("--knowledge", choices=["partial", "max"], default=None)

    p = sub.add_parser("oracle", parents=[common],
                       help="brute-force verification of every bound on random "
                            "small instances")
    p.add_argument("--count", type=int, default=200)

    p = sub.add_parser("simulate", parents=[common],
                       help="run the full experiment bundle into --out")

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic check-in dataset into --out")
    p.add_argument("--n-users", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--zipf-exponent", type=float, default=None)
    p.add_argument("--concentration", type=float, default=None)
    p.add_argument("--support-size", type=int, default=None)
    p.add_argument("--train-len", type=int, default=None)
    p.add_argument("--eval-len", type=int, default=None)

    return top


def _emit_json(payload: dict, out_dir, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text + "\n")


def _effective_config(args, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    fields = {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        fields["threads"] = args.threads
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if fields:
        try:
            cfg = dataclasses.replace(cfg, **fields)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    return cfg


def _cmd_bounds(args) -> int:
    if (args.epsilon is None) == (args.theta is None):
        raise UsageError("give exactly one of --epsilon or --theta")
    rep = bounds.bound_report(n=args.n, size=args.size, epsilon=args.epsilon,
                              theta=args.theta, g=args.g, t=args.t,
                              beta_min=args.beta_min)
    _emit_json(rep.to_dict(), args.out, "bounds.json")
    if args.row:
        print(rep.table_row())
    return 0


def _read_values_csv(path) -> tuple[np.ndarray, np.ndarray]:
    users, xs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_idx", "x"]:
            raise DataError(f"expected header user_idx,x, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"malformed row at line {lineno}: {row!r}")
            try:
                users.append(int(row[0]))
                xs.append(int(row[1]))
            except ValueError as exc:
                raise DataError(f"non-integer value at line {lineno}") from exc
    if not xs:
        raise DataError("no data rows")
    return np.array(users, dtype=np.int64), np.array(xs, dtype=np.int64)


def _cmd_obfuscate(args) -> int:
    if args.out is None:
        raise UsageError("obfuscate requires --out")
    users, xs = _read_values_csv(args.input)
    if xs.min() < 0 or xs.max() >= args.size:
        raise DataError("input value outside [0, size)")
    rng = make_rng(args.seed or 0)
    if args.mechanism == "rr":
        batch = rr_sample_batch(RandomizedResponse(args.epsilon, args.size), xs, rng)
    else:
        if args.g is None:
            raise UsageError("glh requires --g")
        mech = GeneralLocalHash.with_production_family(args.epsilon, args.g, args.size)
        batch = glh_sample_batch(mech, xs, rng)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "records.csv")
    write_records(path, users, batch)
    print(path)
    return 0


def _read_truth_csv(path, size: int) -> np.ndarray:
    p = np.zeros(size)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["symbol", "p_true"]:
            raise DataError(f"expected header symbol,p_true, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                p[int(row[0])] = float(row[1])
            except (IndexError, ValueError) as exc:
                raise DataError(f"bad truth row at line {lineno}") from exc
    return p


def _cmd_estimate(args) -> int:
    if args.out is None:
        raise UsageError("estimate requires --out")
    _, batch = read_records(args.records)
    n = len(batch.ys) if not isinstance(batch, GlhBatch) else len(batch)
    if isinstance(batch, GlhBatch):
        est = estimation.estimate_glh(batch, args.epsilon, args.size)
        null_var = estimation.glh_null_variance(args.epsilon, int(batch.g), n)
    else:
        est = estimation.estimate_rr(batch, args.epsilon, args.size)
        null_var = estimation.rr_null_variance(args.epsilon, args.size, n)
    if args.no_threshold:
        thr = est
    else:
        thr = estimation.apply_significance_threshold(est, null_var,
                                                      args.threshold_level)
    p_true = _read_truth_csv(args.truth, args.size) if args.truth else None
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "estimates.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["symbol"] + (["p_true"] if p_true is not None else []) \
            + ["p_hat", "thresholded"]
        w.writerow(header)
        for s in range(args.size):
            row = [s]
            if p_true is not None:
                row.append(f"{p_true[s]:.12g}")
            row += [f"{est.p_hat[s]:.12g}", f"{thr.p_hat[s]:.12g}"]
            w.writerow(row)
    print(path)
    return 0


def _simulated_scores(args):
    """Shared synth + attack setup for the reid and pse subcommands."""
    cfg = _effective_config(args, knowledge=args.knowledge,
                            reid_trials=args.trials, pse_trials=args.trials)
    streams = spawn_streams(cfg.seed, 2)
    spec = SynthesisSpec(n_users=cfg.n_users, size=cfg.size,
                         zipf_exponent=cfg.zipf_exponent,
                         concentration=cfg.concentration,
                         support_size=cfg.support_size,
                         train_len=cfg.train_len, eval_len=cfg.eval_len)
    population, dataset = synth_population(spec, streams[0])
    train_ds, eval_ds = split_traces(dataset)
    source = eval_ds if cfg.knowledge == "max" else train_ds
    profiles = [reid.train_profile(t, cfg.size, owner=i)
                for i, t in enumerate(source.traces)]
    probes = np.array([t[0] for t in eval_ds.traces], dtype=np.int64)
    probe_pop = _probe_population(probes, cfg.size)

    if args.mechanism == "none":
        mech = None
    elif args.mechanism == "rr":
        if args.epsilon is None:
            raise UsageError("rr requires --epsilon")
        mech = RandomizedResponse(args.epsilon, cfg.size)
    else:
        if args.epsilon is None:
            raise UsageError("glh requires --epsilon")
        g = args.g or max(2, int(round(bounds.glh_utility_optimal_g(args.epsilon))))
        mech = GeneralLocalHash.with_production_family(args.epsilon, g, cfg.size)
    trials = cfg.reid_trials
    us, scores = reid.simulate_score_trials(probe_pop, mech, profiles, trials,
                                            streams[1])
    return cfg, mech, us, scores


def _cmd_reid(args) -> int:
    cfg, mech, us, scores = _simulated_scores(args)
    err = float((np.argmax(scores, axis=1) != us).mean())
    rows = np.arange(us.size)
    genuine = scores[rows, us]
    mask = np.ones_like(scores, dtype=bool)
    mask[rows, us] = False
    impostor = scores[mask]
    det = reid.far_frr_det(genuine, impostor)
    payload = {"error_rate": err, "n": scores.shape[1], "trials": int(us.size),
               "mechanism": args.mechanism, "epsilon": args.epsilon,
               "config_hash": cfg.config_hash()}
    _emit_json(payload, args.out, "reid.json")
    if args.out:
        path = os.path.join(args.out, "det.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "far", "frr"])
            for t, fa, fr in zip(det.thresholds, det.far, det.frr):
                w.writerow([f"{t:.12g}", f"{fa:.12g}", f"{fr:.12g}"])
    return 0


def _read_scores_csv(path) -> pse.ScoreSample:
    gen, imp = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "score"]:
            raise DataError(f"expected header label,score, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"malformed row at line {lineno}: {row!r}")
            label = row[0].strip().lower()
            try:
                v = float(row[1])
            except ValueError as exc:
                raise DataError(f"bad score at line {lineno}") from exc
            if label in ("g", "genuine"):
                gen.append(v)
            elif label in ("i", "impostor"):
                imp.append(v)
            else:
                raise DataError(f"unknown label {row[0]!r} at line {lineno}")
    if not gen or not imp:
        raise DataError("need both genuine and impostor scores")
    return pse.ScoreSample(np.array(gen), np.array(imp))


def _cmd_pse(args) -> int:
    seed = args.seed or 0
    if args.scores:
        sample = _read_scores_csv(args.scores)
        extra = {}
        k = args.k if args.k is not None else pse.DEFAULT_K
    else:
        cfg, mech, us, scores = _simulated_scores(args)
        rows = np.arange(us.size)
        genuine = scores[rows, us]
        mask = np.ones_like(scores, dtype=bool)
        mask[rows, us] = False
        sample = pse.ScoreSample(genuine, scores[mask])
        extra = {"mechanism": args.mechanism, "epsilon": args.epsilon,
                 "config_hash": cfg.config_hash()}
        k = args.k if args.k is not None else cfg.pse_k
    est = pse.pse_estimate(sample, k=k, jitter_seed=seed)
    conv = pse.convergence_probe(sample, (0.25, 0.5, 1.0), k=k, seed=seed)
    payload = {"pse_bits": est.bits, "raw_bits": est.raw_bits, "k": est.k,
               "n_genuine": est.n_p, "n_impostor": est.n_q,
               "below_noise_floor": est.below_noise_floor,
               "convergence": {
                   "stable": conv.stable,
                   "points": [{"n_genuine": c.n_genuine,
                               "n_impostor": c.n_impostor,
                               "bits": c.bits} for c in conv.points]},
               **extra}
    _emit_json(payload, args.out, "pse.json")
    return 0


def _cmd_oracle(args) -> int:
    report = oracle.verify_bound_suite(args.count, args.seed or 0)
    _emit_json(report.to_dict(), args.out, "oracle.json")
    return 0 if report.passed else 3


def _cmd_simulate(args) -> int:
    if args.out is None:
        raise UsageError("simulate requires --out")
    cfg = _effective_config(args)
    result = run_experiment(cfg, args.out)
    print(os.path.join(result.out_dir, "MANIFEST.json"))
    return 0


def _cmd_synth(args) -> int:
    if args.out is None:
        raise UsageError("synth requires --out")
    cfg = _effective_config(args, n_users=args.n_users, size=args.size,
                            zipf_exponent=args.zipf_exponent,
                            concentration=args.concentration,
                            support_size=args.support_size,
                            train_len=args.train_len, eval_len=args.eval_len)
    spec = SynthesisSpec(n_users=cfg.n_users, size=cfg.size,
                         zipf_exponent=cfg.zipf_exponent,
                         concentration=cfg.concentration,
                         support_size=cfg.support_size,
                         train_len=cfg.train_len, eval_len=cfg.eval_len)
    rng = make_rng(cfg.seed)
    _, dataset = synth_population(spec, rng)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "checkins.csv")
    write_synth_checkins(dataset, path)
    truth = {"spec": dataclasses.asdict(spec), "seed": cfg.seed}
    with open(os.path.join(args.out, "synth_truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    print(path)
    return 0


_HANDLERS = {
    "bounds": _cmd_bounds,
    "obfuscate": _cmd_obfuscate,
    "estimate": _cmd_estimate,
    "reid": _cmd_reid,
    "pse": _cmd_pse,
    "oracle": _cmd_oracle,
    "simulate": _cmd_simulate,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.cmd](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
