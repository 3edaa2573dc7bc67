import hashlib

import numpy as np
import pytest

from entexpand.corpus import Corpus, MaskedSample
from entexpand.ensemble import (
    ClassScore,
    PredictionCache,
    build_prediction_cache,
    cache_from_representations,
    kl_div,
    score_model_on_class,
    score_model_overall,
    score_models,
    select_top_k,
)
from entexpand.model import ModelDims, init_params


def dirichlet_rows(rng, n, v):
    return rng.dirichlet(np.ones(v), size=n)


class TestKlDiv:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = rng.dirichlet(np.ones(6))
            assert abs(kl_div(p, p)) < 1e-12

    def test_point_mass_vs_uniform(self):
        got = kl_div([1.0, 0.0], [0.5, 0.5])
        # the zero entry is floored at 1e-12, which perturbs ln 2 only
        # below the 1e-9 tolerance
        assert abs(got - np.log(2.0)) < 1e-9

    def test_frozen_value(self):
        assert abs(kl_div([0.7, 0.3], [0.6, 0.4]) - 0.021600854143546535) < 1e-12

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            assert kl_div(p, q) >= 0.0

    def test_asymmetric(self):
        p, q = [0.9, 0.1], [0.2, 0.8]
        assert kl_div(p, q) != kl_div(q, p)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="same length"):
            kl_div([0.5, 0.5], [0.2, 0.3, 0.5])


class TestScoreModelOnClass:
    def test_identical_seed_reps_score_zero(self):
        reps = {0: [0.25, 0.75], 1: [0.25, 0.75], 2: [0.25, 0.75]}
        cs = score_model_on_class(reps, [0, 1, 2], class_id="c")
        assert cs.class_id == "c"
        assert abs(cs.score) < 1e-12

    def test_two_seed_frozen_value(self):
        # ordered-pair mean of KL([.7,.3],[.6,.4]) and its reverse
        reps = {0: [0.7, 0.3], 1: [0.6, 0.4]}
        want = -(kl_div([0.7, 0.3], [0.6, 0.4]) + kl_div([0.6, 0.4], [0.7, 0.3])) / 2
        assert abs(score_model_on_class(reps, [0, 1]).score - want) < 1e-15

    def test_seed_order_invariant(self):
        rng = np.random.default_rng(2)
        reps = {e: rng.dirichlet(np.ones(4)) for e in range(4)}
        a = score_model_on_class(reps, [0, 1, 2, 3]).score
        b = score_model_on_class(reps, [3, 1, 0, 2]).score
        assert abs(a - b) < 1e-12

    def test_score_nonpositive(self):
        rng = np.random.default_rng(3)
        reps = dirichlet_rows(rng, 5, 6)
        assert score_model_on_class(reps, [0, 1, 2]).score <= 0.0

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError, match="at least 2 seeds"):
            score_model_on_class({0: [1.0]}, [0])


class TestScoreModelOverall:
    def test_geometric_mean_exact(self):
        assert score_model_overall([-0.1, -0.4]) == -0.2

    def test_accepts_class_scores(self):
        scores = [ClassScore("a", -0.1), ClassScore("b", -0.4)]
        assert score_model_overall(scores) == -0.2

    def test_floor_applies(self):
        got = score_model_overall([0.0, -1.0])
        assert abs(got - -np.exp(0.5 * np.log(1e-12))) < 1e-15

    def test_single_class(self):
        assert abs(score_model_overall([-0.3]) - -0.3) < 1e-15

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            score_model_overall([])


class TestSelectTopK:
    def reps_for(self, sigma, rng):
        base = np.array([0.4, 0.3, 0.2, 0.1])
        rows = np.abs(base + sigma * rng.normal(size=(6, 4))) + 1e-9
        return rows / rows.sum(axis=1, keepdims=True)

    def test_identical_rep_model_ranks_first(self):
        rng = np.random.default_rng(4)
        perfect = np.tile(np.array([0.4, 0.3, 0.2, 0.1]), (6, 1))
        noisy = [self.reps_for(0.05, rng) for _ in range(3)]
        order, scores = select_top_k([noisy[0], perfect, noisy[1], noisy[2]], {"c": [0, 1, 2]}, k=2)
        assert order[0] == 1
        assert score_model_on_class(perfect, [0, 1, 2]).score == 0.0
        # the overall aggregate floors each |class score| at 1e-12
        assert scores[1] == pytest.approx(-1e-12, rel=1e-9)

    def test_tie_breaks_by_index(self):
        perfect = np.tile(np.array([0.5, 0.5]), (3, 1))
        order, scores = select_top_k([perfect, perfect.copy(), perfect.copy()], {"c": [0, 1]}, k=3)
        assert order == [0, 1, 2]
        assert scores[0] == scores[1] == scores[2]

    def test_model_list_order_respected(self):
        rng = np.random.default_rng(5)
        models = [self.reps_for(s, rng) for s in (0.3, 0.01, 0.1)]
        order, scores = select_top_k(models, {"c": [0, 1, 2], "d": [3, 4]}, k=3)
        assert sorted(order) == [0, 1, 2]
        assert order == sorted(order, key=lambda i: (-scores[i], i))

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="exceeds"):
            select_top_k([np.eye(2)], {"c": [0, 1]}, k=2)

    def test_scores_match_score_models(self):
        rng = np.random.default_rng(6)
        models = [self.reps_for(0.1, rng) for _ in range(3)]
        seed_ids = {"c": [0, 1], "d": [2, 3]}
        _, scores = select_top_k(models, seed_ids, k=1)
        assert scores == score_models(models, seed_ids)


class TestPredictionCache:
    def make(self, rng, v=6, provenance=()):
        return PredictionCache(rows=dirichlet_rows(rng, v, v), provenance=provenance)

    def test_validates_square(self):
        with pytest.raises(ValueError, match="square"):
            PredictionCache(rows=np.full((2, 3), 0.2))

    def test_validates_distributions(self):
        with pytest.raises(ValueError, match="probability"):
            PredictionCache(rows=np.array([[0.9, 0.3], [0.5, 0.5]]))

    def test_top_sorted_by_probability(self):
        rows = np.array([[0.1, 0.6, 0.3], [0.2, 0.2, 0.6], [1 / 3, 1 / 3, 1 / 3]])
        cache = PredictionCache(rows=rows)
        assert cache.top(0, n=2) == [(1, 0.6), (2, 0.3)]
        # equal probabilities tie toward the lower entity id
        assert [e for e, _ in cache.top(2)] == [0, 1, 2]

    def test_dense_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        prov = (hashlib.sha256(b"a").hexdigest(), hashlib.sha256(b"b").hexdigest())
        cache = self.make(rng, provenance=prov)
        path = tmp_path / "c.bin"
        cache.save(path)
        loaded = PredictionCache.load(path)
        assert np.array_equal(loaded.rows, cache.rows)
        assert loaded.provenance == prov

    def test_sparse_roundtrip_approximate(self, tmp_path):
        rng = np.random.default_rng(8)
        cache = self.make(rng, v=10)
        path = tmp_path / "c.bin"
        cache.save(path, sparse=True, top_m=4)
        loaded = PredictionCache.load(path)
        # kept entries are exact; each row still sums to 1
        np.testing.assert_allclose(loaded.rows.sum(axis=1), 1.0, atol=1e-9)
        for r in range(10):
            keep = np.argsort(-cache.rows[r], kind="stable")[:4]
            np.testing.assert_array_equal(loaded.rows[r, sorted(keep)], cache.rows[r, sorted(keep)])

    def test_sparse_full_width_is_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        cache = self.make(rng, v=5)
        path = tmp_path / "c.bin"
        cache.save(path, sparse=True, top_m=5)
        assert np.array_equal(PredictionCache.load(path).rows, cache.rows)

    def test_checksum_corruption(self, tmp_path):
        rng = np.random.default_rng(10)
        path = tmp_path / "c.bin"
        self.make(rng).save(path)
        blob = bytearray(path.read_bytes())
        blob[30] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            PredictionCache.load(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(ValueError, match="not a prediction cache"):
            PredictionCache.load(path)

    def test_bad_provenance_rejected(self, tmp_path):
        rng = np.random.default_rng(11)
        cache = self.make(rng, provenance=("abcd",))
        with pytest.raises(ValueError, match="sha256"):
            cache.save(tmp_path / "c.bin")


class TestCacheBuilding:
    def test_average_of_tables(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 1.0], [0.0, 1.0]])
        cache = cache_from_representations([a, b])
        np.testing.assert_array_equal(cache.rows, [[0.5, 0.5], [0.0, 1.0]])

    def test_convex_combination(self):
        rng = np.random.default_rng(12)
        mats = [dirichlet_rows(rng, 4, 4) for _ in range(3)]
        cache = cache_from_representations(mats)
        lo = np.min(mats, axis=0)
        hi = np.max(mats, axis=0)
        assert np.all(cache.rows >= lo - 1e-15) and np.all(cache.rows <= hi + 1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cache_from_representations([])

    def test_from_models(self):
        samples = []
        for e in range(3):
            samples.append(MaskedSample(token_ids=(0, 1 + e), mask_pos=0, entity_id=e))
            samples.append(MaskedSample(token_ids=(1 + e, 0), mask_pos=1, entity_id=e))
        corpus = Corpus(samples=samples)
        dims = ModelDims(v_t=4, v_e=3, h=8, d=4)
        models = [init_params(dims, s) for s in (0, 1)]
        cache = build_prediction_cache(models, corpus, provenance=(hashlib.sha256(b"m").hexdigest(),))
        assert cache.v_e == 3
        np.testing.assert_allclose(cache.rows.sum(axis=1), 1.0, atol=1e-9)
        with pytest.raises(ValueError):
            build_prediction_cache([], corpus)
