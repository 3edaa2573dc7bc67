"""Training: label-smoothing prediction loss, hard-negative contrastive
loss, positive/negative entity selection, pair batches, and the phase
loops (prediction-only pretraining, then alternating prediction and
contrastive batches driven by a prior expansion's ranked lists).
"""

import logging
from dataclasses import dataclass

import numpy as np

from ._seeds import spawn_seed
from .corpus import balanced_epoch_samples
from .model import AdamState, LossSpec, init_params, loss_and_grad, optimizer_step

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass
class SmoothingConfig:
    eta: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must be in [0, 1)")


@dataclass
class ContrastiveConfig:
    tau_plus: float = 0.05
    beta: float = 1.0
    t: float = 0.5
    thr_pos: int = 10
    l_neg: int = 50
    u_neg: int = 110

    def __post_init__(self):
        if not 0.0 <= self.tau_plus < 1.0:
            raise ValueError("tau_plus must be in [0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.t <= 0.0:
            raise ValueError("t must be > 0")
        if self.l_neg >= self.u_neg:
            raise ValueError("l_neg must be < u_neg")
        if self.thr_pos > self.l_neg:
            logger.warning(
                "thr_pos=%d above l_neg=%d: negative interval overlaps positives",
                self.thr_pos,
                self.l_neg,
            )

    def loss_spec(self) -> LossSpec:
        return LossSpec(
            mode="contrastive", tau_plus=self.tau_plus, beta=self.beta, t=self.t
        )


@dataclass
class PairBatch:
    """2N samples where 2m and 2m+1 are partners; pair_kind tags each pair."""

    samples: list
    pair_kind: list

    def __post_init__(self):
        if len(self.samples) % 2:
            raise ValueError("pair batch must have even length")
        if len(self.pair_kind) != len(self.samples) // 2:
            raise ValueError("one pair_kind entry per pair")


@dataclass
class PhasePlan:
    """Model counts, epochs, and learning rates for the training phases."""

    n_models: int = 5
    top_k: int = 3
    epochs_phase1: int = 8
    epochs_phase3: int = 8
    cl_rounds: int = 1
    lr_pred: float = 2e-3
    lr_cl: float = 1e-3
    batch_size: int = 32
    cl_pairs: int = 8
    pos_fraction: float = 0.5

    def __post_init__(self):
        counts = (
            self.n_models,
            self.top_k,
            self.epochs_phase1,
            self.epochs_phase3,
            self.cl_rounds,
            self.batch_size,
            self.cl_pairs,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all plan counts must be >= 1")
        if self.top_k > self.n_models:
            raise ValueError("top_k must be <= n_models")
        if not 0.0 <= self.pos_fraction <= 1.0:
            raise ValueError("pos_fraction must be in [0, 1]")


def label_smoothing_loss(predictions, labels, eta: float) -> float:
    """Smoothed cross-entropy: the true class weighs 1-eta, every other
    class weighs eta; logs floored at 1e-12; mean over the batch.
    """
    probs = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    w = np.full_like(probs, eta)
    w[np.arange(n), labels] = 1.0 - eta
    return float(-(w * np.log(np.maximum(probs, LOG_FLOOR))).sum(axis=1).mean())


def select_positive_entities(ranked_prev, seeds, thr_pos: int) -> list:
    """Seeds plus every entity ranked above thr_pos (0-based, exclusive)."""
    out = list(seeds)
    have = set(out)
    for rank, e in enumerate(ranked_prev):
        if rank >= thr_pos:
            break
        if e not in have:
            out.append(e)
            have.add(e)
    return out


def select_negative_entities(ranked_prev, l_neg: int, u_neg: int) -> list:
    """Entities whose 0-based rank lies strictly between l_neg and u_neg."""
    out = [e for rank, e in enumerate(ranked_prev) if l_neg < rank < u_neg]
    if not out:
        raise ValueError(f"no negatives in interval ({l_neg}, {u_neg})")
    return out


def build_pair_batch(
    e_pos, e_neg, corpus, n_pairs: int, pos_fraction: float, rng_seed: int
) -> PairBatch:
    """Assemble a contrastive pair batch.

    round(n_pairs * pos_fraction) positive pairs join samples of (possibly
    different) positive entities; the remaining pairs take two samples of
    one negative entity, falling back to the same sample twice when the
    entity has only one.
    """
    if not e_pos or not e_neg:
        raise ValueError("positive and negative entity sets must be nonempty")
    rng = np.random.default_rng(rng_seed)
    n_pos = round(n_pairs * pos_fraction)
    samples = []
    kinds = []

    def draw_sample(entity_id):
        idxs = corpus.samples_of[entity_id]
        return corpus.samples[idxs[rng.integers(len(idxs))]]

    for _ in range(n_pos):
        a = e_pos[rng.integers(len(e_pos))]
        b = e_pos[rng.integers(len(e_pos))]
        samples.append(draw_sample(a))
        samples.append(draw_sample(b))
        kinds.append("positive")
    for _ in range(n_pairs - n_pos):
        e = e_neg[rng.integers(len(e_neg))]
        idxs = corpus.samples_of[e]
        if len(idxs) >= 2:
            i, j = rng.choice(len(idxs), size=2, replace=False)
            samples.append(corpus.samples[idxs[i]])
            samples.append(corpus.samples[idxs[j]])
        else:
            logger.debug("negative entity %d has one sample; pairing with itself", e)
            s = corpus.samples[idxs[0]]
            samples.append(s)
            samples.append(s)
        kinds.append("negative")
    return PairBatch(samples=samples, pair_kind=kinds)


def contrastive_terms(zs, cfg: ContrastiveConfig):
    """Similarity terms of the contrastive loss for given projections.

    Returns (s_pos, s_neg_raw, s_neg, per_item); the loss is
    per_item.sum().  Projections 2m and 2m+1 are partners.
    """
    z = np.asarray(zs, dtype=np.float64)
    n2 = z.shape[0]
    if n2 < 4 or n2 % 2:
        raise ValueError("need an even number of projections, at least 4")
    idx = np.arange(n2)
    partner = idx ^ 1
    sims = z @ z.T
    s_pos = np.exp(sims[idx, partner] / cfg.t)

    mask = np.ones((n2, n2), dtype=bool)
    mask[idx, idx] = False
    mask[idx, partner] = False
    e_hi = np.where(mask, np.exp((1.0 + cfg.beta) * sims / cfg.t), 0.0)
    e_lo = np.where(mask, np.exp(cfg.beta * sims / cfg.t), 0.0)
    s_tilde = (n2 - 2) * e_hi.sum(axis=1) / e_lo.sum(axis=1)

    raw = (-(n2 - 2) * cfg.tau_plus * s_pos + s_tilde) / (1.0 - cfg.tau_plus)
    s_neg = np.maximum(raw, np.exp(-1.0 / cfg.t))
    per_item = np.log(s_pos + s_neg) - np.log(s_pos)
    return s_pos, raw, s_neg, per_item


def contrastive_loss(zs, cfg: ContrastiveConfig) -> float:
    """Hard-negative contrastive loss, summed over all 2N items."""
    return float(contrastive_terms(zs, cfg)[3].sum())


def _prediction_batches(corpus, batch_size: int, rng_seed: int):
    idxs = balanced_epoch_samples(corpus, spawn_seed(rng_seed, "epoch-samples"))
    order = np.random.default_rng(spawn_seed(rng_seed, "epoch-order")).permutation(
        len(idxs)
    )
    for start in range(0, len(idxs), batch_size):
        chunk = order[start : start + batch_size]
        yield [corpus.samples[idxs[i]] for i in chunk]


def train_phase1(
    corpus,
    dims,
    plan: PhasePlan,
    rng_seed: int,
    smoothing: SmoothingConfig = None,
    model_id: int = 0,
):
    """Train one model on masked entity prediction alone."""
    smoothing = smoothing or SmoothingConfig()
    params = init_params(dims, spawn_seed(rng_seed, "init"))
    state = AdamState.init(params)
    spec = LossSpec(mode="prediction", eta=smoothing.eta)
    for epoch in range(plan.epochs_phase1):
        losses = []
        for batch in _prediction_batches(
            corpus, plan.batch_size, spawn_seed(rng_seed, "p1", epoch)
        ):
            loss, grads = loss_and_grad(params, batch, spec)
            optimizer_step(params, grads, state, plan.lr_pred)
            losses.append(loss)
        logger.info(
            "phase=1 model=%d epoch=%d pred_loss=%.6f cl_loss=-",
            model_id,
            epoch,
            float(np.mean(losses)),
        )
    return params


def class_entity_sets(expansion_results: dict, seeds: dict, cfg: ContrastiveConfig):
    """Per-class positive/negative entity sets from prior ranked lists."""
    sets = {}
    for name, ranked in expansion_results.items():
        e_pos = select_positive_entities(ranked, seeds[name], cfg.thr_pos)
        e_neg = select_negative_entities(ranked, cfg.l_neg, cfg.u_neg)
        sets[name] = (e_pos, e_neg)
    return sets


def train_phase3(
    params,
    corpus,
    expansion_results: dict,
    seeds: dict,
    cfg: ContrastiveConfig,
    plan: PhasePlan,
    rng_seed: int,
    smoothing: SmoothingConfig = None,
    use_contrastive: bool = True,
    model_id: int = 0,
):
    """Train with alternating prediction and contrastive batches.

    ``expansion_results`` maps class name to the prior ranked entity list;
    ``seeds`` maps class name to seed entity ids.  After every prediction
    batch one contrastive pair batch runs, cycling classes round-robin.
    With ``use_contrastive`` false the contrastive batches are skipped and
    this reduces to more prediction-only training.
    """
    smoothing = smoothing or SmoothingConfig()
    params = params.copy()
    state = AdamState.init(params)
    pred_spec = LossSpec(mode="prediction", eta=smoothing.eta)
    cl_spec = cfg.loss_spec()
    sets = class_entity_sets(expansion_results, seeds, cfg) if use_contrastive else {}
    class_names = sorted(sets)
    if use_contrastive and not class_names:
        raise ValueError("contrastive training needs at least one class")
    cl_step = 0
    for epoch in range(plan.epochs_phase3):
        pred_losses = []
        cl_losses = []
        for batch in _prediction_batches(
            corpus, plan.batch_size, spawn_seed(rng_seed, "p3", epoch)
        ):
            loss, grads = loss_and_grad(params, batch, pred_spec)
            optimizer_step(params, grads, state, plan.lr_pred)
            pred_losses.append(loss)
            if not use_contrastive:
                continue
            name = class_names[cl_step % len(class_names)]
            e_pos, e_neg = sets[name]
            pair_batch = build_pair_batch(
                e_pos,
                e_neg,
                corpus,
                plan.cl_pairs,
                plan.pos_fraction,
                spawn_seed(rng_seed, "pairs", cl_step),
            )
            cl_step += 1
            loss, grads = loss_and_grad(params, pair_batch.samples, cl_spec)
            optimizer_step(params, grads, state, plan.lr_cl)
            cl_losses.append(loss)
        logger.info(
            "phase=3 model=%d epoch=%d pred_loss=%.6f cl_loss=%s",
            model_id,
            epoch,
            float(np.mean(pred_losses)),
            f"{float(np.mean(cl_losses)):.6f}" if cl_losses else "-",
        )
    return params
