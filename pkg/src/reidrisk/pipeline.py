"""Dataset handling, synthetic populations, and experiment orchestration.

The experiment runner reproduces the full evaluation loop on synthetic
data: build a population of users with individual behavior chains, release
one obfuscated datum per user under each mechanism and privacy level,
attack the releases with the profile matcher, estimate score-level identity
information, compare everything against the closed-form caps and error
bounds, and measure estimator utility. Every report row carries the config
hash and seed; repeated runs with one seed are byte-identical apart from
the MANIFEST timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import bounds, estimation, probcore, pse, reid
from .mechanisms import GeneralLocalHash, RandomizedResponse, glh_sample_batch, rr_sample_batch
from .probcore import (Alphabet, CategoricalDistribution, MarkovSource,
                       PopulationModel)


class DataError(Exception):
    """Malformed or unusable input data; maps to CLI exit code 2."""


class PipelineError(Exception):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class TraceDataset:
    """Per-user symbol traces over one alphabet, with provenance."""

    alphabet: Alphabet
    traces: tuple
    provenance: dict = field(default_factory=dict)
    user_labels: Optional[tuple] = None

    def __post_init__(self):
        if not self.traces:
            raise DataError("dataset holds no users")
        cleaned = []
        for i, t in enumerate(self.traces):
            arr = np.asarray(t, dtype=np.int64)
            if arr.size < 1:
                raise DataError(f"user {i} has an empty trace")
            if arr.min() < 0 or arr.max() >= self.alphabet.size:
                raise DataError(f"user {i} trace leaves the alphabet")
            cleaned.append(arr)
        object.__setattr__(self, "traces", tuple(cleaned))

    @property
    def n_users(self) -> int:
        return len(self.traces)


def ingest_checkins(path, min_events: int = 10) -> TraceDataset:
    """Load a check-in CSV `user_id,timestamp,poi_id` into per-user traces.

    Events are ordered by timestamp per user (stable on ties, so duplicate
    timestamps keep input order); users with fewer than min_events events
    are dropped and counted in the provenance. Any malformed row aborts the
    ingest with its line number.
    """
    per_user: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "timestamp", "poi_id"]:
            raise DataError(f"expected header user_id,timestamp,poi_id, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or not row[0] or not row[2]:
                raise DataError(f"malformed row at line {lineno}: {row!r}")
            user, ts, poi = row
            try:
                key = (0, float(ts), "")
            except ValueError:
                key = (1, 0.0, ts)
            per_user.setdefault(user, []).append((key, poi))
    kept = {u: evs for u, evs in per_user.items() if len(evs) >= min_events}
    dropped = len(per_user) - len(kept)
    if not kept:
        raise DataError(f"no user reaches the minimum of {min_events} events")
    users = sorted(kept)
    labels = sorted({poi for evs in kept.values() for _, poi in evs})
    label_ids = {lab: i for i, lab in enumerate(labels)}
    traces = []
    for u in users:
        evs = sorted(kept[u], key=lambda e: e[0])
        traces.append(np.array([label_ids[poi] for _, poi in evs], dtype=np.int64))
    return TraceDataset(alphabet=Alphabet(len(labels), tuple(labels)),
                        traces=tuple(traces),
                        provenance={"source": str(path), "kept_users": len(users),
                                    "dropped_users": dropped, "min_events": min_events},
                        user_labels=tuple(users))


def split_traces(dataset: TraceDataset) -> tuple[TraceDataset, TraceDataset]:
    """Per user: first ceil(L/2) events for training, the rest for evaluation."""
    train, evaln = [], []
    for i, t in enumerate(dataset.traces):
        if t.size < 2:
            raise DataError(f"user {i} trace has length {t.size}; need >= 2 to split")
        cut = (t.size + 1) // 2
        train.append(t[:cut])
        evaln.append(t[cut:])
    prov = dict(dataset.provenance)
    return (TraceDataset(dataset.alphabet, tuple(train), {**prov, "half": "train"},
                         dataset.user_labels),
            TraceDataset(dataset.alphabet, tuple(evaln), {**prov, "half": "eval"},
                         dataset.user_labels))


@dataclass(frozen=True)
class SynthesisSpec:
    """Synthetic population shape.

    Global symbol popularity follows a Zipf law; each user's chain lives on
    its own `support_size` symbols drawn by popularity, with visit and
    transition rows drawn from a Dirichlet centered on the restricted
    popularity (larger `concentration` means users look more alike).
    """

    n_users: int
    size: int
    zipf_exponent: float = 1.0
    concentration: float = 1.0
    support_size: int = 16
    train_len: int = 16
    eval_len: int = 16

    def __post_init__(self):
        if self.n_users < 1 or self.size < 2:
            raise ValueError("need n_users >= 1 and size >= 2")
        if self.zipf_exponent <= 0:
            raise ValueError("Zipf exponent must be positive")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        if not (1 <= self.support_size <= self.size):
            raise ValueError("support_size must lie in [1, size]")
        if self.train_len < 1 or self.eval_len < 1:
            raise ValueError("trace lengths must be >= 1")


def zipf_law(size: int, exponent: float) -> np.ndarray:
    """Popularity vector p(rank) proportional to (rank+1)^(-exponent)."""
    w = (np.arange(1, size + 1, dtype=np.float64)) ** (-exponent)
    return w / w.sum()


def synth_population(spec: SynthesisSpec, rng: np.random.Generator
                     ) -> tuple[PopulationModel, TraceDataset]:
    """Draw the population and one full trace per user, deterministically."""
    n, size, k = spec.n_users, spec.size, spec.support_size
    global_law = zipf_law(size, spec.zipf_exponent)
    log_pop = np.log(global_law)

    # per-user supports: popularity-weighted sampling without replacement
    gumbel = rng.gumbel(size=(n, size))
    supports = np.argpartition(-(log_pop[None, :] + gumbel), k - 1, axis=1)[:, :k]
    supports.sort(axis=1)

    restricted = global_law[supports.ravel()].reshape(n, k)
    restricted /= restricted.sum(axis=1, keepdims=True)
    alpha = spec.concentration * k * restricted

    pis = rng.gamma(np.maximum(alpha, 1e-12))
    pis /= pis.sum(axis=1, keepdims=True)
    trans = rng.gamma(np.maximum(alpha[:, None, :], 1e-12), size=(n, k, k))
    trans /= trans.sum(axis=2, keepdims=True)

    total_len = spec.train_len + spec.eval_len
    traces = _simulate_chains(pis, trans, supports, total_len, rng)

    models = tuple(
        MarkovSource(initial=pis[i], transitions=trans[i], trace_len=spec.eval_len,
                     support=supports[i])
        for i in range(n))
    population = PopulationModel(n=n, prior=CategoricalDistribution.uniform(n),
                                 models=models)
    dataset = TraceDataset(alphabet=Alphabet(size),
                           traces=tuple(traces),
                           provenance={"synthesis": asdict(spec)})
    return population, dataset


def _simulate_chains(pis: np.ndarray, trans: np.ndarray, supports: np.ndarray,
                     length: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Step every user's chain in lockstep; returns traces in global symbols."""
    n, k = pis.shape
    out = np.empty((n, length), dtype=np.int64)
    cdf0 = np.cumsum(pis, axis=1)
    cdf0[:, -1] = 1.0
    state = (rng.random(n)[:, None] > cdf0).sum(axis=1)
    out[:, 0] = state
    cdfs = np.cumsum(trans, axis=2)
    cdfs[:, :, -1] = 1.0
    rows = np.arange(n)
    for t in range(1, length):
        cur = cdfs[rows, state]
        state = (rng.random(n)[:, None] > cur).sum(axis=1)
        out[:, t] = state
    return [supports[i][out[i]] for i in range(n)]


_CONFIG_FIELDS: dict = {
    "schema_version": int,
    "seed": int,
    "threads": int,
    "n_users": int,
    "size": int,
    "zipf_exponent": float,
    "concentration": float,
    "support_size": int,
    "train_len": int,
    "eval_len": int,
    "checkins_path": (str, type(None)),
    "min_events": int,
    "epsilons": (list, tuple),
    "glh_g": (int, type(None)),
    "knowledge": str,
    "reid_trials": int,
    "pse_trials": int,
    "pse_k": int,
    "threshold_level": float,
    "phis": (list, tuple),
    "theta_for_g_sweep": float,
    "g_sweep": (list, tuple),
    "beta_min": (float, type(None)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, typed experiment description; serializes to a flat JSON object."""

    schema_version: int = 1
    seed: int = 0
    threads: int = 0
    n_users: int = 200
    size: int = 64
    zipf_exponent: float = 1.0
    concentration: float = 1.0
    support_size: int = 16
    train_len: int = 16
    eval_len: int = 16
    checkins_path: Optional[str] = None
    min_events: int = 10
    epsilons: tuple = (0.1, 1.0, 10.0)
    glh_g: Optional[int] = None
    knowledge: str = "partial"
    reid_trials: int = 500
    pse_trials: int = 500
    pse_k: int = 5
    threshold_level: float = 0.05
    phis: tuple = (20,)
    theta_for_g_sweep: float = 0.5
    g_sweep: tuple = (4, 64, 1024)
    beta_min: Optional[float] = None

    def __post_init__(self):
        if self.schema_version != 1:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.knowledge not in ("partial", "max"):
            raise ValueError("knowledge must be 'partial' or 'max'")
        if not self.epsilons:
            raise ValueError("need at least one epsilon")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "phis", tuple(int(p) for p in self.phis))
        object.__setattr__(self, "g_sweep", tuple(int(g) for g in self.g_sweep))
        if any(p < 1 for p in self.phis):
            raise ValueError("phi values must be >= 1")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise DataError("config must be a flat JSON object")
        unknown = set(raw) - set(_CONFIG_FIELDS)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        for key, want in _CONFIG_FIELDS.items():
            if key in raw and not isinstance(raw[key], want):
                if want is float and isinstance(raw[key], int):
                    raw[key] = float(raw[key])
                else:
                    raise DataError(f"config key {key} has the wrong type")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad config: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilons"] = list(self.epsilons)
        d["phis"] = list(self.phis)
        d["g_sweep"] = list(self.g_sweep)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _glh_bucket_count(config: ExperimentConfig, epsilon: float) -> int:
    if config.glh_g is not None:
        return max(2, int(config.glh_g))
    return max(2, int(round(bounds.glh_utility_optimal_g(epsilon))))


def _probe_population(probes: np.ndarray, size: int) -> PopulationModel:
    """Uniform prior over users, each deterministically holding its probe datum."""
    n = probes.size
    dists = [CategoricalDistribution.point_mass(size, int(x)) for x in probes]
    return PopulationModel.single_datum(CategoricalDistribution.uniform(n), dists)


@dataclass
class ExperimentResult:
    out_dir: str
    manifest: dict
    files: dict


def run_experiment(config: ExperimentConfig, out_dir) -> ExperimentResult:
    """Run every stage and write the report bundle into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    tag = config.config_hash()
    seed = config.seed
    stages: list[dict] = []
    files: dict = {}
    manifest_path = os.path.join(out_dir, "MANIFEST.json")

    def finish_manifest(status: str):
        manifest = {
            "schema_version": 1,
            "status": status,
            "config": config.to_dict(),
            "config_hash": tag,
            "seed": seed,
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "stages": stages,
            "files": files,
        }
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest

    def run_stage(name, fn):
        try:
            out = fn()
        except Exception as exc:
            stages.append({"name": name, "status": "failed", "error": str(exc)})
            finish_manifest("incomplete")
            raise PipelineError(name, exc) from exc
        stages.append({"name": name, "status": "ok"})
        return out

    def record_file(path):
        with open(path, "rb") as fh:
            files[os.path.basename(path)] = hashlib.sha256(fh.read()).hexdigest()

    streams = probcore.spawn_streams(seed, 4 + 2 * len(config.epsilons) + len(config.g_sweep))
    stream_iter = iter(streams)

    # stage: dataset
    def stage_dataset():
        if config.checkins_path:
            ds = ingest_checkins(config.checkins_path, config.min_events)
            return None, ds
        spec = SynthesisSpec(n_users=config.n_users, size=config.size,
                             zipf_exponent=config.zipf_exponent,
                             concentration=config.concentration,
                             support_size=config.support_size,
                             train_len=config.train_len, eval_len=config.eval_len)
        return synth_population(spec, next(stream_iter))

    population, dataset = run_stage("dataset", stage_dataset)
    size = dataset.alphabet.size
    n = dataset.n_users

    train_ds, eval_ds = run_stage("split", lambda: split_traces(dataset))
    probes = np.array([t[0] for t in eval_ds.traces], dtype=np.int64)

    def stage_profiles():
        source = eval_ds if config.knowledge == "max" else train_ds
        return [reid.train_profile(t, size, owner=i) for i, t in enumerate(source.traces)]

    profiles = run_stage("profiles", stage_profiles)
    probe_pop = _probe_population(probes, size)

    # stage: closed-form bound sweep
    def stage_bounds():
        rows = []
        for eps in config.epsilons:
            g = _glh_bucket_count(config, eps)
            rep = bounds.bound_report(n=n, size=size, epsilon=eps, g=g)
            fano = rep.fano
            rows.append([tag, seed, eps, g, rep.theta_rr, rep.alpha_ldp, rep.alpha_rr,
                         rep.theta_glh, rep.alpha_glh,
                         fano["ldp"]["value"], fano["rr"]["value"], fano["glh"]["value"]])
        path = os.path.join(out_dir, "bounds_sweep.csv")
        _write_csv(path, ["config", "seed", "epsilon", "g", "theta_rr", "alpha_ldp",
                          "alpha_rr", "theta_glh", "alpha_glh",
                          "fano_ldp", "fano_rr", "fano_glh"], rows)
        record_file(path)
        return rows

    bound_rows = run_stage("bounds", stage_bounds)

    # stage: attack sweep (error rate and score-level information per epsilon)
    def stage_attack():
        point_streams = [next(stream_iter) for _ in config.epsilons]

        def one_point(i):
            eps = config.epsilons[i]
            rng = point_streams[i]
            g = _glh_bucket_count(config, eps)
            out = []
            for mech_name in ("rr", "glh"):
                if mech_name == "rr":
                    mech = RandomizedResponse(eps, size)
                    alpha = bounds.pie_bound_rr(eps, n, size)
                else:
                    mech = GeneralLocalHash.with_production_family(eps, g, size)
                    alpha = bounds.pie_bound_glh(eps, g, n, size)
                sample = pse.harvest_scores(probe_pop, mech, profiles,
                                            config.pse_trials, rng)
                est = pse.pse_estimate(sample, k=config.pse_k, jitter_seed=seed)
                err_us, err_scores = reid.simulate_score_trials(
                    probe_pop, mech, profiles, config.reid_trials, rng)
                err = float((np.argmax(err_scores, axis=1) != err_us).mean())
                fano_ldp = bounds.fano_lower_bound(
                    bounds.pie_bound_ldp(eps, n, size), n=n).value
                fano_mech = bounds.fano_lower_bound(alpha, n=n).value
                out.append([tag, seed, eps, mech_name, g if mech_name == "glh" else "",
                            est.bits, est.raw_bits, alpha,
                            sample.genuine.size, sample.impostor.size,
                            err, fano_ldp, fano_mech])
            return out

        workers = config.threads if config.threads > 0 else (os.cpu_count() or 1)
        if workers > 1 and len(config.epsilons) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(one_point, range(len(config.epsilons))))
        else:
            chunks = [one_point(i) for i in range(len(config.epsilons))]
        rows = [row for chunk in chunks for row in chunk]
        pse_path = os.path.join(out_dir, "pse_sweep.csv")
        _write_csv(pse_path,
                   ["config", "seed", "epsilon", "mechanism", "g", "pse_bits",
                    "pse_raw_bits", "alpha_bound", "n_genuine", "n_impostor",
                    "error_rate", "fano_ldp", "fano_mech"], rows)
        record_file(pse_path)
        return rows

    run_stage("attack", stage_attack)

    # stage: estimator utility over epsilon
    def stage_utility_eps():
        rng = next(stream_iter)
        p_true = np.bincount(probes, minlength=size).astype(np.float64) / probes.size
        rows = []
        for eps in config.epsilons:
            g = _glh_bucket_count(config, eps)
            rr_batch = rr_sample_batch(RandomizedResponse(eps, size), probes, rng)
            est_rr = estimation.estimate_rr(rr_batch, eps, size)
            thr_rr = estimation.apply_significance_threshold(
                est_rr, estimation.rr_null_variance(eps, size, n), config.threshold_level)
            glh = GeneralLocalHash.with_production_family(eps, g, size)
            glh_batch = glh_sample_batch(glh, probes, rng)
            est_glh = estimation.estimate_glh(glh_batch, eps, size)
            thr_glh = estimation.apply_significance_threshold(
                est_glh, estimation.glh_null_variance(eps, g, n), config.threshold_level)
            for mech_name, est, thr in (("rr", est_rr, thr_rr), ("glh", est_glh, thr_glh)):
                for requested_phi in config.phis:
                    phi = min(requested_phi, size)  # top-phi of however many symbols exist
                    raw = estimation.l2_and_relative_error(p_true, est.p_hat, phi)
                    cut = estimation.l2_and_relative_error(p_true, thr.p_hat, phi)
                    rows.append([tag, seed, eps, mech_name, phi,
                                 raw.l2_sum, _none(raw.mean_relative_error),
                                 cut.l2_sum, _none(cut.mean_relative_error)])
        path = os.path.join(out_dir, "utility_eps.csv")
        _write_csv(path, ["config", "seed", "epsilon", "mechanism", "phi",
                          "l2_raw", "rel_err_raw", "l2_thresholded",
                          "rel_err_thresholded"], rows)
        record_file(path)
        return rows

    run_stage("utility_eps", stage_utility_eps)

    # stage: bucket-count sweep at fixed shrink factor
    def stage_utility_g():
        theta = config.theta_for_g_sweep
        p_true = np.bincount(probes, minlength=size).astype(np.float64) / probes.size
        top = int(np.argmax(p_true))
        rows = []
        for g in config.g_sweep:
            rng = next(stream_iter)
            eps = bounds.epsilon_for_theta(theta, g)
            glh = GeneralLocalHash.with_production_family(eps, g, size)
            batch = glh_sample_batch(glh, probes, rng)
            est = estimation.estimate_glh(batch, eps, size)
            sq_err = float((est.p_hat[top] - p_true[top]) ** 2)
            rows.append([tag, seed, g, eps,
                         estimation.expected_l2_glh_theta(theta, g, n, float(p_true[top])),
                         estimation.expected_l2_glh_limit(theta, n, float(p_true[top])),
                         sq_err])
        path = os.path.join(out_dir, "utility_g.csv")
        _write_csv(path, ["config", "seed", "g", "epsilon", "expected_l2_top",
                          "limit_l2_top", "observed_sq_err_top"], rows)
        record_file(path)
        return rows

    run_stage("utility_g", stage_utility_g)

    manifest = finish_manifest("complete")
    return ExperimentResult(out_dir=str(out_dir), manifest=manifest, files=files)


def _none(v):
    return "" if v is None else v


def write_synth_checkins(dataset: TraceDataset, path) -> None:
    """Write a dataset in the check-in CSV format (timestamp = event index)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "timestamp", "poi_id"])
        for u, trace in enumerate(dataset.traces):
            for t, x in enumerate(trace):
                w.writerow([f"u{u:06d}", t, dataset.alphabet.label_of(int(x))])
