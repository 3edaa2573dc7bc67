"""Probabilistic set expansion.

Each step averages the cached distributions of the current set, ranks the
remaining entities by that average, and picks the best of the top-w
candidates by closeness (negative KL divergence) to a per-candidate
anchor distribution built from rank-decayed current-set masses.  The
window w grows stepwise with the set size.  A final pass re-scores every
expanded entity against the full set and combines expansion order with
that rank into an aggregation score.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

@dataclass
class ExpansionConfig:
    w0: int = 5
    growth: int = 2
    step: int = 10
    alpha: float = None
    tau_stage: int = 5
    target_size: int = 100
    anchor_sharpness: float = 1.0

    def __post_init__(self):
        if self.w0 < 1 or self.step < 1 or self.tau_stage < 1 or self.target_size < 1:
            raise ValueError("w0, step, tau_stage, target_size must be >= 1")
        if self.growth < 0:
            raise ValueError("growth must be >= 0")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")

    def alpha_for(self, v_e: int) -> float:
        """Anchor scaling factor; defaults to V_e/10 so current-set members
        get a pre-softmax logit of 0.1 over the 1/V_e base."""
        return self.alpha if self.alpha is not None else v_e / 10.0


@dataclass
class ExpansionState:
    """Current entity list (seeds first) and 1-based expansion order."""

    current: list
    n_seeds: int
    expanded_order: dict = field(default_factory=dict)

    @property
    def expanded(self) -> list:
        return self.current[self.n_seeds :]


def set_representation(cache, current):
    """Mean cached distribution over the current set."""
    if not len(current):
        raise ValueError("current set is empty")
    ids = np.asarray(current, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= cache.v_e:
        raise ValueError("uncached entity in current set")
    return cache.rows[ids].mean(axis=0)


def candidate_list(set_rep, current):
    """Entities sorted by set-representation probability descending,
    current members removed; ties break toward the smaller entity index."""
    set_rep = np.asarray(set_rep, dtype=np.float64)
    order = np.argsort(-set_rep, kind="stable")
    exclude = set(int(e) for e in current)
    return [int(e) for e in order if int(e) not in exclude]


def window_size(cfg: ExpansionConfig, current_size: int) -> int:
    return cfg.w0 + cfg.growth * (current_size // cfg.step)


def _anchor_raw(candidate, candidate_rep, current, cfg, v_e):
    p = 1.0 / v_e
    d = np.full(v_e, p)
    alpha = cfg.alpha_for(v_e)
    for i, e in enumerate(current):
        d[e] = p * alpha * 2.0 ** (-(i // cfg.tau_stage))
    d[candidate] = candidate_rep[candidate]
    return d


def anchor_distribution(candidate, candidate_rep, current, cfg: ExpansionConfig):
    """Anchor distribution for one candidate against the current set.

    Starts from the uniform base 1/V_e, gives the i-th current member a
    rank-decayed mass p*alpha*2^(-floor(i/tau_stage)), keeps the
    candidate's own cached probability at its index, then softmaxes
    (scaled by anchor_sharpness).
    """
    candidate_rep = np.asarray(candidate_rep, dtype=np.float64)
    if candidate in set(current):
        raise ValueError("candidate is already in the current set")
    raw = _anchor_raw(candidate, candidate_rep, current, cfg, candidate_rep.shape[0])
    return kernels.softmax_rows(cfg.anchor_sharpness * raw[None, :])[0]


def window_search(candidates, current, cache, cfg: ExpansionConfig):
    """Best entity among the first min(w, |candidates|) of the ranked list.

    Scores each windowed candidate by -KL(cached row, anchor); ties go to
    the earlier list position.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    w = min(window_size(cfg, len(current)), len(candidates))
    window = np.asarray(candidates[:w], dtype=np.int64)
    cur_ids = np.asarray(current, dtype=np.int64)
    v_e = cache.v_e
    p = 1.0 / v_e
    alpha = cfg.alpha_for(v_e)
    cur_vals = np.array(
        [p * alpha * 2.0 ** (-(i // cfg.tau_stage)) for i in range(len(cur_ids))]
    )
    scores = kernels.window_scores(
        np.ascontiguousarray(cache.rows[window]),
        window,
        cur_ids,
        cur_vals,
        p,
        cfg.anchor_sharpness,
    )
    return int(window[int(np.argmax(scores))])


def expand(seeds, cache, cfg: ExpansionConfig) -> ExpansionState:
    """Grow the seed set to target_size expanded entities."""
    seeds = [int(e) for e in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    if cfg.target_size > cache.v_e - len(seeds):
        raise ValueError(
            f"target size {cfg.target_size} exceeds the {cache.v_e - len(seeds)} "
            "expandable entities"
        )
    state = ExpansionState(current=list(seeds), n_seeds=len(seeds))
    while len(state.expanded) < cfg.target_size:
        rep = set_representation(cache, state.current)
        candidates = candidate_list(rep, state.current)
        if not candidates:
            raise ValueError("candidate list exhausted before reaching target size")
        winner = window_search(candidates, state.current, cache, cfg)
        state.current.append(winner)
        state.expanded_order[winner] = len(state.expanded)
    return state


@dataclass
class RankedEntity:
    entity_id: int
    order: int
    rank: int
    score: float


def rerank(state: ExpansionState, cache, cfg: ExpansionConfig) -> list:
    """Stability re-ranking of the expanded entities.

    Each expanded entity is re-scored by -KL(row, anchor) with the anchor
    built from the full final set minus the entity itself; sorting those
    scores gives rank(e) from 1.  The aggregation score
    sqrt(1/order * 1/rank) favors entities that were expanded early and
    still score well against the final set; output is sorted by it,
    descending, ties toward the earlier-expanded entity.
    """
    expanded = state.expanded
    if not expanded:
        return []
    scores = {}
    for e in expanded:
        others = [c for c in state.current if c != e]
        anchor = anchor_distribution(e, cache.rows[e], others, cfg)
        scores[e] = -kernels.kl_divergence(cache.rows[e], anchor)
    by_score = sorted(expanded, key=lambda e: (-scores[e], state.expanded_order[e]))
    rank_of = {e: r for r, e in enumerate(by_score, start=1)}
    out = [
        RankedEntity(
            entity_id=e,
            order=state.expanded_order[e],
            rank=rank_of[e],
            score=math.sqrt(1.0 / (state.expanded_order[e] * rank_of[e])),
        )
        for e in expanded
    ]
    out.sort(key=lambda r: (-r.score, r.order))
    return out


def save_expansion_results(path, results: dict):
    """Write one JSON record per query.

    ``results`` maps class name to (seed surfaces, list of entity records),
    each record a dict with surface, order, rank, score.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(results):
            seeds, entities = results[name]
            fh.write(
                json.dumps(
                    {"class": name, "seeds": list(seeds), "entities": entities},
                    sort_keys=True,
                )
                + "\n"
            )


def load_expansion_results(path) -> dict:
    """Read expansion records back; returns {class: (seeds, entities)}."""
    results = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            results[rec["class"]] = (rec["seeds"], rec["entities"])
    return results
