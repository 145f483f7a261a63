"""Tests for score-separation entropy: score harvesting (dense and sparse),
the nearest-neighbor divergence estimator, and the convergence probe."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reidrisk.mechanisms import GeneralLocalHash, RandomizedResponse
from reidrisk.probcore import CategoricalDistribution, MarkovSource, PopulationModel, make_rng
from reidrisk.pse import (
    ConvergenceReport,
    KnnKlEstimate,
    ScoreSample,
    _kth_nn_distance,
    convergence_probe,
    harvest_scores,
    harvest_scores_sparse,
    knn_kl_estimate,
    pse_estimate,
)
from reidrisk.reid import train_profile

# KL(N(0,1) || N(1,1)) = (1/2) log2(e), frozen from high precision.
GAUSS_SHIFT_KL_BITS = 0.7213475204444817


def point_mass_population(symbols, size):
    prior = CategoricalDistribution.uniform(len(symbols))
    dists = [CategoricalDistribution.point_mass(size, s) for s in symbols]
    return PopulationModel.single_datum(prior, dists)


def brute_kth(queries, refs, k, self_in_refs):
    out = np.empty(len(queries))
    refs = np.asarray(refs, dtype=np.float64)
    for i, q in enumerate(np.asarray(queries, dtype=np.float64)):
        d = np.sort(np.abs(refs - q))
        if self_in_refs:
            d = d[1:]  # one zero self-distance removed
        out[i] = d[k - 1]
    return out


class TestScoreSample:
    def test_usable_requires_both_sides(self):
        assert ScoreSample(np.array([1.0]), np.array([0.0])).usable
        assert not ScoreSample(np.array([1.0]), np.array([])).usable
        assert not ScoreSample(np.array([]), np.array([0.0])).usable

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ScoreSample(np.array([np.inf]), np.array([0.0]))
        with pytest.raises(ValueError):
            ScoreSample(np.array([1.0]), np.array([np.nan]))


class TestHarvesting:
    def test_dense_counts(self):
        pop = point_mass_population([0, 1, 2], size=3)
        profiles = [train_profile([s], 3, owner=i) for i, s in enumerate([0, 1, 2])]
        sample = harvest_scores(pop, None, profiles, trials=40, rng=make_rng(0), meta={"tag": "x"})
        assert sample.genuine.size == 40
        assert sample.impostor.size == 40 * 2
        assert sample.meta["tag"] == "x" and sample.meta["n_users"] == 3

    def test_dense_clear_release_scores_are_exact(self):
        pop = point_mass_population([0, 1], size=2)
        profiles = [train_profile([s], 2, owner=i) for i, s in enumerate([0, 1])]
        sample = harvest_scores(pop, None, profiles, trials=25, rng=make_rng(1))
        assert np.all(sample.genuine == 0.0)  # log2 1
        assert np.allclose(sample.impostor, math.log2(profiles[0].floor))

    def test_sparse_counts_and_meta(self):
        pop = point_mass_population([0, 1, 2, 3], size=4)
        profiles = [train_profile([s], 4, owner=i) for i, s in enumerate(range(4))]
        sample = harvest_scores_sparse(pop, None, profiles, 100, 300, make_rng(2))
        assert sample.genuine.size == 100 and sample.impostor.size == 300
        assert sample.meta["n_users"] == 4

    def test_sparse_clear_release_scores_are_exact(self):
        pop = point_mass_population([0, 1, 2], size=3)
        profiles = [train_profile([s], 3, owner=i) for i, s in enumerate([0, 1, 2])]
        sample = harvest_scores_sparse(pop, None, profiles, 50, 150, make_rng(3))
        assert np.all(sample.genuine == 0.0)
        # A uniformly chosen WRONG claimant never matches a distinct point mass.
        assert np.allclose(sample.impostor, math.log2(profiles[0].floor))

    def test_sparse_deterministic(self):
        pop = point_mass_population([0, 1, 2], size=3)
        profiles = [train_profile([s], 3, owner=i) for i, s in enumerate([0, 1, 2])]
        mech = RandomizedResponse(epsilon=1.0, size=3)
        s1 = harvest_scores_sparse(pop, mech, profiles, 64, 64, make_rng(7))
        s2 = harvest_scores_sparse(pop, mech, profiles, 64, 64, make_rng(7))
        assert np.array_equal(s1.genuine, s2.genuine)
        assert np.array_equal(s1.impostor, s2.impostor)

    def test_sparse_agrees_with_dense_in_law(self):
        # Same population and mechanism: the two harvesters must estimate the
        # same divergence up to sampling noise.
        rng = make_rng(11)
        symbols = list(rng.integers(0, 8, size=6))
        pop = point_mass_population(symbols, size=8)
        profiles = [train_profile([s, s, int(rng.integers(8))], 8, owner=i)
                    for i, s in enumerate(symbols)]
        mech = RandomizedResponse(epsilon=2.0, size=8)
        dense = harvest_scores(pop, mech, profiles, trials=4000, rng=make_rng(12))
        sparse = harvest_scores_sparse(pop, mech, profiles, 4000, 20000, rng=make_rng(13))
        d = pse_estimate(dense, k=5).bits
        s = pse_estimate(sparse, k=5).bits
        assert abs(d - s) < 0.12 * max(d, s)

    def test_sparse_validation(self):
        pop = point_mass_population([0], size=2)
        profiles = [train_profile([0], 2)]
        with pytest.raises(ValueError):
            harvest_scores_sparse(pop, None, profiles, 10, 10, make_rng(0))
        pop2 = point_mass_population([0, 1], size=2)
        profiles2 = [train_profile([s], 2, owner=i) for i, s in enumerate([0, 1])]
        with pytest.raises(ValueError):
            harvest_scores_sparse(pop2, None, profiles2, 0, 10, make_rng(0))
        with pytest.raises(ValueError):
            harvest_scores_sparse(pop2, "bogus", profiles2, 10, 10, make_rng(0))

    def test_sparse_rejects_trace_population(self):
        m = MarkovSource(np.array([1.0, 0.0]), np.eye(2), trace_len=3)
        pop = PopulationModel(2, CategoricalDistribution.uniform(2), (m, m))
        profiles = [train_profile([0, 0], 2, owner=i) for i in range(2)]
        with pytest.raises(ValueError):
            harvest_scores_sparse(pop, None, profiles, 10, 10, make_rng(0))

    def test_single_user_dense_sample_is_unusable(self):
        pop = point_mass_population([1], size=2)
        profiles = [train_profile([1], 2)]
        sample = harvest_scores(pop, None, profiles, trials=5, rng=make_rng(0))
        assert not sample.usable
        with pytest.raises(ValueError):
            pse_estimate(sample)


class TestKthNeighborDistance:
    @settings(deadline=None, max_examples=60)
    @given(
        st.lists(st.floats(-100, 100), min_size=8, max_size=40, unique=True),
        st.lists(st.floats(-100, 100), min_size=8, max_size=40, unique=True),
        st.integers(1, 6),
    )
    def test_cross_matches_brute_force(self, qs, rs, k):
        k = min(k, len(rs))
        queries = np.sort(np.asarray(qs))
        refs = np.sort(np.asarray(rs))
        got = _kth_nn_distance(queries, refs, k, self_in_refs=False)
        want = brute_kth(queries, refs, k, self_in_refs=False)
        assert np.allclose(got, want, rtol=1e-12, atol=0)

    @settings(deadline=None, max_examples=60)
    @given(
        st.lists(st.floats(-100, 100), min_size=8, max_size=40, unique=True),
        st.integers(1, 6),
    )
    def test_self_matches_brute_force(self, vs, k):
        k = min(k, len(vs) - 1)
        arr = np.sort(np.asarray(vs))
        got = _kth_nn_distance(arr, arr, k, self_in_refs=True)
        want = brute_kth(arr, arr, k, self_in_refs=True)
        assert np.allclose(got, want, rtol=1e-12, atol=0)

    def test_chunked_equals_unchunked(self):
        rng = make_rng(19)
        arr = np.sort(rng.normal(size=500))
        refs = np.sort(rng.normal(size=700))
        a = _kth_nn_distance(arr, refs, 5, self_in_refs=False, chunk_cells=64)
        b = _kth_nn_distance(arr, refs, 5, self_in_refs=False)
        assert np.array_equal(a, b)
        c = _kth_nn_distance(arr, arr, 5, self_in_refs=True, chunk_cells=64)
        d = _kth_nn_distance(arr, arr, 5, self_in_refs=True)
        assert np.array_equal(c, d)


class TestDivergenceEstimator:
    def test_shifted_gaussians_match_closed_form(self):
        rng = make_rng(2024)
        p = rng.normal(0.0, 1.0, 20_000)
        q = rng.normal(1.0, 1.0, 20_000)
        est = knn_kl_estimate(p, q, k=5)
        assert abs(est.bits - GAUSS_SHIFT_KL_BITS) < 0.08 * GAUSS_SHIFT_KL_BITS
        assert est.n_p == est.n_q == 20_000 and est.k == 5

    def test_same_law_estimates_near_zero(self):
        rng = make_rng(77)
        p = rng.normal(0.0, 1.0, 20_000)
        q = rng.normal(0.0, 1.0, 20_000)
        est = knn_kl_estimate(p, q, k=5)
        assert abs(est.raw_bits) < 0.05
        assert est.bits >= 0.0

    def test_reported_bits_never_negative(self):
        est = KnnKlEstimate(bits=0.0, raw_bits=-0.01, k=5, n_p=10, n_q=10)
        assert est.below_noise_floor
        assert KnnKlEstimate(bits=0.2, raw_bits=0.2, k=5, n_p=10, n_q=10).below_noise_floor is False

    def test_duplicate_heavy_samples_are_handled_deterministically(self):
        rng = make_rng(5)
        p = rng.integers(0, 4, size=400).astype(float)
        q = rng.integers(0, 4, size=400).astype(float)
        a = knn_kl_estimate(p, q, k=3, jitter_seed=42)
        b = knn_kl_estimate(p, q, k=3, jitter_seed=42)
        assert a.raw_bits == b.raw_bits
        c = knn_kl_estimate(p, q, k=3, jitter_seed=43)
        assert abs(c.raw_bits - a.raw_bits) < 0.05

    def test_fully_degenerate_samples_still_finite(self):
        est = knn_kl_estimate(np.zeros(30), np.zeros(30), k=3)
        assert math.isfinite(est.raw_bits)

    def test_validation(self):
        with pytest.raises(ValueError):
            knn_kl_estimate(np.arange(10.0), np.arange(10.0), k=0)
        with pytest.raises(ValueError):
            knn_kl_estimate(np.arange(5.0), np.arange(10.0), k=5)  # need k+1 p-samples
        with pytest.raises(ValueError):
            knn_kl_estimate(np.arange(10.0), np.arange(4.0), k=5)  # need k q-samples

    def test_separated_supports_give_large_positive(self):
        rng = make_rng(8)
        p = rng.normal(0.0, 0.1, 2000)
        q = rng.normal(10.0, 0.1, 2000)
        assert knn_kl_estimate(p, q, k=5).bits > 5.0


class TestConvergenceProbe:
    def _gauss_sample(self, n=20_000):
        rng = make_rng(31)
        return ScoreSample(rng.normal(0.0, 1.0, n), rng.normal(1.0, 1.0, 3 * n))

    def test_points_grow_and_stabilize(self):
        rep = convergence_probe(self._gauss_sample(), fractions=(0.25, 0.5, 1.0), k=5, seed=3)
        assert len(rep.points) == 3
        ns = [p.n_genuine for p in rep.points]
        assert ns == sorted(ns) and ns[-1] == 20_000
        assert rep.stable

    def test_deterministic_per_seed(self):
        s = self._gauss_sample(4000)
        a = convergence_probe(s, (0.5, 1.0), seed=9)
        b = convergence_probe(s, (0.5, 1.0), seed=9)
        assert [p.bits for p in a.points] == [p.bits for p in b.points]

    def test_absolute_gate_covers_indistinguishable_laws(self):
        # Evenly spaced interleaved scores: the estimator lands slightly
        # negative, both prefixes clamp to 0 bits, and the absolute
        # 0.005-bit gate marks the (flat) sequence stable.
        gen = np.arange(2000, dtype=np.float64)
        imp = np.arange(2000, dtype=np.float64) + 0.5
        rep = convergence_probe(ScoreSample(gen, imp), (0.5, 1.0), k=5, seed=1)
        assert all(p.bits == 0.0 for p in rep.points)
        assert rep.stable

    def test_fraction_validation(self):
        s = self._gauss_sample(1000)
        with pytest.raises(ValueError):
            convergence_probe(s, ())
        with pytest.raises(ValueError):
            convergence_probe(s, (0.0, 1.0))
        with pytest.raises(ValueError):
            convergence_probe(s, (0.5, 1.5))

    def test_single_fraction_is_stable_by_convention(self):
        rep = convergence_probe(self._gauss_sample(2000), (1.0,), seed=0)
        assert len(rep.points) == 1 and rep.stable
