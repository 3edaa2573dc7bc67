import numpy as np
import pytest

from entexpand.ensemble import PredictionCache
from entexpand.expansion import (
    ExpansionConfig,
    ExpansionState,
    anchor_distribution,
    candidate_list,
    expand,
    load_expansion_results,
    rerank,
    save_expansion_results,
    set_representation,
    window_search,
    window_size,
)

CFG = ExpansionConfig(w0=5, growth=2, step=10)


def uniform_cache(v):
    return PredictionCache(rows=np.full((v, v), 1.0 / v))


def random_cache(rng, v):
    return PredictionCache(rows=rng.dirichlet(np.ones(v), size=v))


def oracle_window_search(candidates, current, cache, cfg):
    """Score every windowed candidate independently and keep the best."""
    v = cache.v_e
    w = min(cfg.w0 + cfg.growth * (len(current) // cfg.step), len(candidates))
    alpha = cfg.alpha if cfg.alpha is not None else v / 10.0
    best, best_s = None, None
    for e in candidates[:w]:
        d = np.full(v, 1.0 / v)
        for i, c in enumerate(current):
            d[c] = (1.0 / v) * alpha * 2.0 ** (-(i // cfg.tau_stage))
        d[e] = cache.rows[e][e]
        logits = cfg.anchor_sharpness * d
        ex = np.exp(logits - logits.max())
        anchor = ex / ex.sum()
        p = np.maximum(cache.rows[e], 1e-12)
        p = p / p.sum()
        q = np.maximum(anchor, 1e-12)
        q = q / q.sum()
        s = -float((p * (np.log(p) - np.log(q))).sum())
        if best_s is None or s > best_s:
            best, best_s = e, s
    return best


class TestExpansionConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ExpansionConfig(w0=0)
        with pytest.raises(ValueError):
            ExpansionConfig(growth=-1)
        with pytest.raises(ValueError):
            ExpansionConfig(alpha=0.0)

    def test_alpha_default_scales_with_vocab(self):
        assert CFG.alpha_for(40) == 4.0
        assert ExpansionConfig(alpha=2.5).alpha_for(40) == 2.5


class TestSetRepresentation:
    def test_mean_of_rows(self):
        cache = PredictionCache(rows=np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(set_representation(cache, [0, 1]), [0.5, 0.5])

    def test_single_member(self):
        rng = np.random.default_rng(0)
        cache = random_cache(rng, 5)
        np.testing.assert_array_equal(set_representation(cache, [3]), cache.rows[3])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            set_representation(uniform_cache(3), [])

    def test_uncached_entity(self):
        with pytest.raises(ValueError, match="uncached"):
            set_representation(uniform_cache(3), [0, 7])


class TestCandidateList:
    def test_sorted_with_ties_by_index(self):
        got = candidate_list(np.array([0.1, 0.4, 0.4, 0.1]), current=[3])
        assert got == [1, 2, 0]

    def test_excludes_all_current(self):
        rng = np.random.default_rng(1)
        rep = rng.dirichlet(np.ones(8))
        got = candidate_list(rep, current=[0, 4, 7])
        assert sorted(got + [0, 4, 7]) == list(range(8))

    def test_descending_probability(self):
        rep = np.array([0.05, 0.5, 0.2, 0.25])
        assert candidate_list(rep, current=[]) == [1, 3, 2, 0]


class TestWindowSize:
    def test_staircase(self):
        assert window_size(CFG, 3) == 5
        assert window_size(CFG, 9) == 5
        assert window_size(CFG, 10) == 7
        assert window_size(CFG, 23) == 9

    def test_non_decreasing(self):
        sizes = [window_size(CFG, n) for n in range(60)]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))

    def test_zero_growth(self):
        cfg = ExpansionConfig(w0=4, growth=0, step=10)
        assert window_size(cfg, 57) == 4


class TestAnchorDistribution:
    def test_all_equal_raw_gives_uniform(self):
        # alpha*p == candidate's own probability == p: constant logits
        v = 5
        rep = np.full(v, 1.0 / v)
        cfg = ExpansionConfig(alpha=1.0, tau_stage=100)
        got = anchor_distribution(3, rep, [0, 1], cfg)
        np.testing.assert_allclose(got, np.full(v, 1.0 / v), atol=1e-15)

    def test_stage_decay_halves_raw_mass(self):
        v = 16
        cfg = ExpansionConfig(alpha=4.0, tau_stage=2)
        rep = np.full(v, 1.0 / v)
        current = [0, 1, 2]
        d = np.full(v, 1.0 / v)
        p = 1.0 / v
        d[0] = p * 4.0
        d[1] = p * 4.0
        d[2] = p * 2.0
        d[5] = rep[5]
        ex = np.exp(d - d.max())
        np.testing.assert_allclose(
            anchor_distribution(5, rep, current, cfg), ex / ex.sum(), atol=1e-15
        )

    def test_reference_softmax_values(self):
        # raw vector [2, 2, 1, 0.5]: members 0 and 1 share the first decay
        # stage, member 2 is one stage down, candidate 3 keeps its own mass
        cfg = ExpansionConfig(alpha=8.0, tau_stage=2)
        rep = np.array([0.2, 0.2, 0.1, 0.5])
        got = anchor_distribution(3, rep, [0, 1, 2], cfg)
        want = [
            0.3859499399348406,
            0.3859499399348406,
            0.1419830482233809,
            0.0861170719069379,
        ]
        np.testing.assert_allclose(got, want, atol=1e-15)

    def test_valid_distribution(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = int(rng.integers(3, 12))
            rep = rng.dirichlet(np.ones(v))
            current = list(rng.choice(v, size=2, replace=False))
            cand = next(e for e in range(v) if e not in current)
            d = anchor_distribution(cand, rep, current, ExpansionConfig())
            assert abs(d.sum() - 1.0) < 1e-9
            assert np.all(d > 0)

    def test_candidate_in_current_rejected(self):
        with pytest.raises(ValueError, match="already in"):
            anchor_distribution(1, np.full(4, 0.25), [0, 1], ExpansionConfig())


class TestWindowSearch:
    def test_window_of_one_returns_head(self):
        rng = np.random.default_rng(3)
        cache = random_cache(rng, 6)
        cfg = ExpansionConfig(w0=1, growth=0, step=10)
        assert window_search([4, 2, 0], [1], cache, cfg) == 4

    def test_self_consistent_candidate_wins(self):
        # entity 2's row is uniform, so with alpha=1 its anchor equals its
        # row exactly and s = 0, the maximum possible
        v = 6
        rows = np.abs(np.random.default_rng(4).normal(size=(v, v))) + 0.05
        rows = rows / rows.sum(axis=1, keepdims=True)
        rows[2] = 1.0 / v
        cache = PredictionCache(rows=rows)
        cfg = ExpansionConfig(w0=5, growth=0, step=10, alpha=1.0, tau_stage=100)
        assert window_search([1, 3, 2, 4, 5], [0], cache, cfg) == 2

    def test_candidate_beyond_window_ignored(self):
        v = 6
        rows = np.full((v, v), 1e-3)
        np.fill_diagonal(rows, 0.2)
        rows = rows / rows.sum(axis=1, keepdims=True)
        rows[5] = 1.0 / v
        cache = PredictionCache(rows=rows)
        cfg = ExpansionConfig(w0=2, growth=0, step=10, alpha=1.0, tau_stage=100)
        # entity 5 would win on score but sits outside the two-wide window
        assert window_search([1, 3, 5, 4], [0], cache, cfg) != 5

    def test_agrees_with_bruteforce(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            v = int(rng.integers(4, 11))
            cache = random_cache(rng, v)
            n_cur = int(rng.integers(1, min(5, v)))
            current = list(rng.choice(v, size=n_cur, replace=False))
            candidates = [e for e in range(v) if e not in current]
            rng.shuffle(candidates)
            cfg = ExpansionConfig(
                w0=int(rng.integers(1, 6)),
                growth=int(rng.integers(0, 3)),
                step=int(rng.integers(1, 6)),
                tau_stage=int(rng.integers(1, 4)),
            )
            got = window_search(candidates, current, cache, cfg)
            assert got == oracle_window_search(candidates, current, cache, cfg)

    def test_empty_candidates(self):
        with pytest.raises(ValueError, match="empty"):
            window_search([], [0], uniform_cache(3), CFG)


class TestExpand:
    def test_single_step(self):
        rng = np.random.default_rng(6)
        cache = random_cache(rng, 8)
        cfg = ExpansionConfig(target_size=1)
        state = expand([0, 1], cache, cfg)
        assert len(state.expanded) == 1
        assert state.current[:2] == [0, 1]
        assert state.expanded_order == {state.expanded[0]: 1}

    def test_invariants(self):
        rng = np.random.default_rng(7)
        cache = random_cache(rng, 12)
        state = expand([3, 5], cache, ExpansionConfig(target_size=6))
        assert len(set(state.current)) == len(state.current)
        assert not set(state.expanded) & {3, 5}
        assert sorted(state.expanded_order.values()) == list(range(1, 7))
        assert [state.expanded_order[e] for e in state.expanded] == list(range(1, 7))

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        cache = random_cache(rng, 10)
        a = expand([0], cache, ExpansionConfig(target_size=5))
        b = expand([0], cache, ExpansionConfig(target_size=5))
        assert a.current == b.current

    def test_target_too_large(self):
        with pytest.raises(ValueError, match="exceeds"):
            expand([0, 1], uniform_cache(5), ExpansionConfig(target_size=4))

    def test_no_seeds(self):
        with pytest.raises(ValueError, match="at least one seed"):
            expand([], uniform_cache(5), ExpansionConfig(target_size=1))

    def test_block_structure_recovered(self):
        # entities 0-4 concentrate probability on one another; 5-9 likewise
        v = 10
        rows = np.full((v, v), 0.01)
        for e in range(v):
            block = range(0, 5) if e < 5 else range(5, 10)
            for b in block:
                rows[e, b] = 0.19
        rows = rows / rows.sum(axis=1, keepdims=True)
        cache = PredictionCache(rows=rows)
        state = expand([0, 1], cache, ExpansionConfig(target_size=3))
        assert set(state.expanded) == {2, 3, 4}


class TestRerank:
    def test_uniform_cache_rank_equals_order(self):
        v = 8
        cache = uniform_cache(v)
        cfg = ExpansionConfig(w0=1, growth=0, step=10, alpha=1.0, tau_stage=100, target_size=4)
        state = expand([0], cache, cfg)
        ranked = rerank(state, cache, cfg)
        assert [r.entity_id for r in ranked] == state.expanded
        for r in ranked:
            assert r.rank == r.order
            assert r.score == 1.0 / r.order

    def test_order_rank_decoupled_scores_exact(self):
        # seed row drives expansion order 1..9; per-row perturbation sizes
        # drive the re-scored ranks independently
        v = 13
        p = 1.0 / v
        rows = np.full((v, v), p)
        prefs = np.zeros(v)
        prefs[1:10] = [0.12 - 0.01 * k for k in range(9)]
        prefs[10:13] = 0.001
        prefs[0] = 1.0 - prefs.sum()
        rows[0] = prefs
        want_rank = {1: 1, 2: 8, 3: 2, 4: 9, 5: 3, 6: 4, 7: 5, 8: 6, 9: 7}
        for e, rank in want_rank.items():
            delta = rank * 1e-4
            rows[e, 10] = p + delta
            rows[e, 11] = p - delta
        cache = PredictionCache(rows=rows)
        cfg = ExpansionConfig(w0=1, growth=0, step=10, alpha=1.0, tau_stage=100, target_size=9)

        state = expand([0], cache, cfg)
        assert state.expanded == list(range(1, 10))
        by_entity = {r.entity_id: r for r in rerank(state, cache, cfg)}
        for e, rank in want_rank.items():
            assert by_entity[e].rank == rank
        assert by_entity[1].score == 1.0
        assert by_entity[2].score == 0.25
        assert by_entity[4].score == 1.0 / 6.0

    def test_output_sorted_by_score(self):
        rng = np.random.default_rng(9)
        cache = random_cache(rng, 12)
        cfg = ExpansionConfig(target_size=6)
        state = expand([0, 1], cache, cfg)
        ranked = rerank(state, cache, cfg)
        scores = [r.score for r in ranked]
        assert scores == sorted(scores, reverse=True)
        assert all(0.0 < s <= 1.0 for s in scores)
        assert {r.entity_id for r in ranked} == set(state.expanded)

    def test_seeds_never_ranked(self):
        rng = np.random.default_rng(10)
        cache = random_cache(rng, 10)
        state = expand([4, 7], cache, ExpansionConfig(target_size=5))
        assert not {r.entity_id for r in rerank(state, cache, ExpansionConfig(target_size=5))} & {4, 7}

    def test_empty_state(self):
        assert rerank(ExpansionState(current=[0], n_seeds=1), uniform_cache(3), CFG) == []


class TestResultsFile:
    def test_roundtrip(self, tmp_path):
        results = {
            "birds": (
                ["robin", "wren"],
                [
                    {"surface": "finch", "order": 1, "rank": 2, "score": 0.7071},
                    {"surface": "crow", "order": 2, "rank": 1, "score": 0.7071},
                ],
            ),
            "fish": (["cod"], [{"surface": "eel", "order": 1, "rank": 1, "score": 1.0}]),
        }
        path = tmp_path / "exp.txt"
        save_expansion_results(path, results)
        assert load_expansion_results(path) == results

    def test_sorted_by_class(self, tmp_path):
        path = tmp_path / "exp.txt"
        save_expansion_results(path, {"z": ([], []), "a": ([], [])})
        lines = path.read_text().splitlines()
        assert '"class": "a"' in lines[0]
        assert '"class": "z"' in lines[1]
