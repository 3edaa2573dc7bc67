"""Synthetic corpus generation with hierarchical semantic classes.

Classes come in sibling groups under shared parents.  Each class owns
private context templates; each parent owns templates shared by all its
sibling classes.  A fraction rho of every entity's sentences use the
parent templates, so siblings become mutually confusable exactly to the
degree rho dictates: rho=0 makes classes trivially separable, rho=1 makes
siblings statistically identical.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .corpus import save_seed_queries, save_truth, SeedQuery

N_SEEDS = 3
POOL_SIZE = 8
SPAN_MIN = 2
SPAN_MAX = 4


@dataclass
class SynthSpec:
    n_parents: int = 3
    siblings_per_parent: int = 2
    entities_per_class: int = 40
    sentences_per_entity: int = 30
    shared_context_ratio: float = 0.5
    context_templates_per_class: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        counts = (
            self.n_parents,
            self.siblings_per_parent,
            self.entities_per_class,
            self.sentences_per_entity,
            self.context_templates_per_class,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if not 0.0 <= self.shared_context_ratio <= 1.0:
            raise ValueError("shared_context_ratio must be in [0, 1]")
        if self.entities_per_class < 4:
            raise ValueError(
                "entities_per_class must be >= 4 (3 seeds plus at least one target)"
            )

    @property
    def n_classes(self) -> int:
        return self.n_parents * self.siblings_per_parent


def _make_templates(rng, pool, count):
    """Build (prefix, suffix) token templates around an entity slot."""
    templates = []
    for _ in range(count):
        left = rng.integers(SPAN_MIN, SPAN_MAX + 1)
        right = rng.integers(SPAN_MIN, SPAN_MAX + 1)
        prefix = [pool[i] for i in rng.integers(len(pool), size=left)]
        suffix = [pool[i] for i in rng.integers(len(pool), size=right)]
        templates.append((prefix, suffix))
    return templates


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write corpus, entity vocab, seed queries, and ground truth.

    Per entity, round(rho * n) sentences use the parent's shared templates
    and the rest use the class's own templates.  The first 3 entities of
    each class are its seeds; ground truth is the rest of the class.
    Deterministic given spec.rng_seed.  Returns the four file paths.
    """
    rng = np.random.default_rng(spec.rng_seed)
    os.makedirs(out_dir, exist_ok=True)

    parent_templates = []
    for p in range(spec.n_parents):
        pool = [f"ctx_p{p}_{m}" for m in range(POOL_SIZE)]
        parent_templates.append(
            _make_templates(rng, pool, spec.context_templates_per_class)
        )

    class_templates = []
    class_names = []
    class_entities = []
    for p in range(spec.n_parents):
        for s in range(spec.siblings_per_parent):
            pool = [f"ctx_p{p}s{s}_{m}" for m in range(POOL_SIZE)]
            class_templates.append(
                _make_templates(rng, pool, spec.context_templates_per_class)
            )
            class_names.append(f"class_p{p}s{s}")
            class_entities.append(
                [
                    f"ent_p{p}s{s}_{k:02d}"
                    for k in range(spec.entities_per_class)
                ]
            )

    n_parent_sents = round(spec.shared_context_ratio * spec.sentences_per_entity)
    lines = []
    for c in range(spec.n_classes):
        parent = c // spec.siblings_per_parent
        for surface in class_entities[c]:
            mention = f"<e>{surface}</e>"
            for j in range(spec.sentences_per_entity):
                pool = (
                    parent_templates[parent] if j < n_parent_sents else class_templates[c]
                )
                prefix, suffix = pool[rng.integers(len(pool))]
                lines.append(" ".join(prefix + [mention] + suffix))
    order = rng.permutation(len(lines))
    corpus_path = os.path.join(out_dir, "corpus.txt")
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for i in order:
            fh.write(lines[i] + "\n")

    vocab_path = os.path.join(out_dir, "entities.txt")
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for members in class_entities:
            for surface in members:
                fh.write(surface + "\n")

    queries = []
    truth = {}
    for c, name in enumerate(class_names):
        members = class_entities[c]
        queries.append(SeedQuery(class_name=name, seeds=members[:N_SEEDS]))
        truth[name] = members[N_SEEDS:]
    seeds_path = os.path.join(out_dir, "seeds.jsonl")
    truth_path = os.path.join(out_dir, "truth.jsonl")
    save_seed_queries(queries, seeds_path)
    save_truth(truth, truth_path)

    return {
        "corpus": corpus_path,
        "vocab": vocab_path,
        "seeds": seeds_path,
        "truth": truth_path,
    }
