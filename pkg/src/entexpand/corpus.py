"""Corpus loading: tagged-mention parsing, vocabularies, masked samples.

Corpus file format: UTF-8 text, one sentence per line, entity mentions
wrapped as ``<e>surface</e>``.  Nesting is forbidden.  The entity
vocabulary file lists one surface per line; line order defines entity
indices.  Seed queries and ground truth are JSON-lines files.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MASK_TOKEN = "[MASK]"
MASK_ID = 0

OPEN_TAG = "<e>"
CLOSE_TAG = "</e>"


class CorpusFormatError(ValueError):
    """Malformed corpus, vocabulary, or query file."""


def normalize_text(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


def tokenize(text: str) -> list:
    return normalize_text(text).split(" ") if normalize_text(text) else []


class EntityVocab:
    """Ordered entity surfaces; line order defines indices."""

    def __init__(self, entities):
        self.entities = list(entities)
        self.index_of = {}
        for i, surface in enumerate(self.entities):
            if surface in self.index_of:
                raise CorpusFormatError(
                    f"duplicate entity surface after normalization: {surface!r}"
                )
            self.index_of[surface] = i
        if len(self.entities) < 2:
            raise CorpusFormatError("entity vocabulary needs at least 2 entities")

    def __len__(self):
        return len(self.entities)

    def __contains__(self, surface):
        return surface in self.index_of

    def surface(self, entity_id: int) -> str:
        return self.entities[entity_id]

    def ids(self, surfaces) -> list:
        """Map surfaces to ids, normalizing first; unknown surface raises."""
        out = []
        for s in surfaces:
            key = normalize_text(s)
            if key not in self.index_of:
                raise CorpusFormatError(f"unknown entity surface: {s!r}")
            out.append(self.index_of[key])
        return out

    @classmethod
    def load(cls, path):
        entities = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                surface = normalize_text(line)
                if not surface:
                    raise CorpusFormatError(f"{path}:{line_no}: empty vocabulary line")
                entities.append(surface)
        return cls(entities)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for surface in self.entities:
                fh.write(surface + "\n")


class TokenVocab:
    """Token surfaces with the reserved mask token at index 0."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if not tokens or tokens[0] != MASK_TOKEN:
            raise CorpusFormatError("token vocabulary must start with the mask token")
        if tokens.count(MASK_TOKEN) != 1:
            raise CorpusFormatError("mask token must appear exactly once")
        self.tokens = tokens
        self.index_of = {t: i for i, t in enumerate(tokens)}
        if len(self.index_of) != len(tokens):
            raise CorpusFormatError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def from_token_set(cls, tokens):
        ordered = [MASK_TOKEN] + sorted(set(tokens) - {MASK_TOKEN})
        return cls(ordered)


@dataclass
class MaskedSample:
    """One sentence rendering with a single entity mention masked out."""

    token_ids: tuple
    mask_pos: int
    entity_id: int


@dataclass
class Corpus:
    samples: list
    samples_of: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.samples_of:
            for i, s in enumerate(self.samples):
                self.samples_of.setdefault(s.entity_id, []).append(i)

    def __len__(self):
        return len(self.samples)


def _parse_line(line: str, line_no: int, path) -> list:
    """Split one corpus line into segments.

    Returns a list of (kind, text) with kind 'text' or 'mention'.
    """
    segments = []
    pos = 0
    while True:
        open_at = line.find(OPEN_TAG, pos)
        close_at = line.find(CLOSE_TAG, pos)
        if open_at == -1 and close_at == -1:
            segments.append(("text", line[pos:]))
            return segments
        if open_at == -1 or (close_at != -1 and close_at < open_at):
            raise CorpusFormatError(
                f"{path}:{line_no}: closing tag without opening tag"
            )
        segments.append(("text", line[pos:open_at]))
        body_start = open_at + len(OPEN_TAG)
        close_at = line.find(CLOSE_TAG, body_start)
        nested = line.find(OPEN_TAG, body_start)
        if close_at == -1:
            raise CorpusFormatError(f"{path}:{line_no}: unclosed entity tag")
        if nested != -1 and nested < close_at:
            raise CorpusFormatError(f"{path}:{line_no}: nested entity tags")
        surface = normalize_text(line[body_start:close_at])
        if not surface:
            raise CorpusFormatError(f"{path}:{line_no}: empty entity mention")
        segments.append(("mention", surface))
        pos = close_at + len(CLOSE_TAG)


def load_corpus(path, vocab_path, unknown_mentions: str = "error"):
    """Load a corpus file against an entity vocabulary.

    Each known entity mention yields one MaskedSample (that mention replaced
    by the mask token, other mentions left as their surface tokens).
    ``unknown_mentions`` is 'error' (default) or 'skip'; in skip mode an
    unknown mention stays in the text as plain tokens and a warning is
    logged.

    Returns (Corpus, EntityVocab, TokenVocab).
    """
    if unknown_mentions not in ("error", "skip"):
        raise ValueError("unknown_mentions must be 'error' or 'skip'")
    entity_vocab = EntityVocab.load(vocab_path)

    renderings = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            segments = _parse_line(line.rstrip("\n"), line_no, path)
            parts = []
            mention_slots = []
            for kind, text in segments:
                if kind == "text":
                    parts.extend(tokenize(text))
                    continue
                if text in entity_vocab:
                    mention_slots.append((len(parts), entity_vocab.index_of[text]))
                    parts.append(None)
                elif unknown_mentions == "skip":
                    logger.warning(
                        "%s:%d: mention %r not in entity vocabulary, kept as text",
                        path,
                        line_no,
                        text,
                    )
                    parts.extend(text.split(" "))
                else:
                    raise CorpusFormatError(
                        f"{path}:{line_no}: mention {text!r} not in entity vocabulary"
                    )
            entity_at = {pos: eid for pos, eid in mention_slots}
            for masked_pos, entity_id in mention_slots:
                tokens = []
                mask_pos = None
                for j, part in enumerate(parts):
                    if part is not None:
                        tokens.append(part)
                    elif j == masked_pos:
                        mask_pos = len(tokens)
                        tokens.append(MASK_TOKEN)
                    else:
                        tokens.extend(entity_vocab.surface(entity_at[j]).split(" "))
                renderings.append((tokens, mask_pos, entity_id))

    token_set = set()
    for tokens, _, _ in renderings:
        token_set.update(tokens)
    token_vocab = TokenVocab.from_token_set(token_set)

    samples = [
        MaskedSample(
            token_ids=tuple(token_vocab.index_of[t] for t in tokens),
            mask_pos=mask_pos,
            entity_id=entity_id,
        )
        for tokens, mask_pos, entity_id in renderings
    ]
    corpus = Corpus(samples=samples)
    missing = [
        entity_vocab.surface(e)
        for e in range(len(entity_vocab))
        if e not in corpus.samples_of
    ]
    if missing:
        raise CorpusFormatError(
            f"{path}: entities with no mentions in the corpus: {missing}"
        )
    return corpus, entity_vocab, token_vocab


def balanced_epoch_samples(corpus: Corpus, rng_seed: int) -> list:
    """Per-epoch sample selection capped at the per-entity average.

    Each entity contributes at most ceil(total / V_e) of its samples,
    chosen uniformly without replacement; entities with fewer keep all.
    Deterministic given ``rng_seed``.
    """
    if not corpus.samples:
        raise ValueError("corpus has no samples")
    cap = math.ceil(len(corpus.samples) / len(corpus.samples_of))
    rng = np.random.default_rng(rng_seed)
    chosen = []
    for entity_id in sorted(corpus.samples_of):
        idxs = corpus.samples_of[entity_id]
        if len(idxs) <= cap:
            chosen.extend(idxs)
        else:
            picked = rng.choice(len(idxs), size=cap, replace=False)
            chosen.extend(idxs[i] for i in picked)
    chosen.sort()
    return chosen


def pack_samples(samples):
    """Flatten samples into ragged-batch arrays (tok, off, labels)."""
    off = np.zeros(len(samples) + 1, dtype=np.int64)
    labels = np.zeros(len(samples), dtype=np.int64)
    flat = []
    for i, s in enumerate(samples):
        flat.extend(s.token_ids)
        off[i + 1] = len(flat)
        labels[i] = s.entity_id
    return np.asarray(flat, dtype=np.int64), off, labels


@dataclass
class SeedQuery:
    """One expansion query: a named class with its seed entities."""

    class_name: str
    seeds: list
    truth: list = None


def load_seed_queries(path) -> list:
    """Read seed queries from a JSON-lines file.

    Each record needs "class" and "seeds"; "truth" is optional.
    """
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{line_no}: bad JSON: {exc}") from None
            if "class" not in rec or "seeds" not in rec:
                raise CorpusFormatError(
                    f"{path}:{line_no}: record needs 'class' and 'seeds'"
                )
            queries.append(
                SeedQuery(
                    class_name=str(rec["class"]),
                    seeds=[normalize_text(s) for s in rec["seeds"]],
                    truth=(
                        [normalize_text(s) for s in rec["truth"]]
                        if rec.get("truth") is not None
                        else None
                    ),
                )
            )
    if not queries:
        raise CorpusFormatError(f"{path}: no seed queries found")
    return queries


def load_truth(path) -> dict:
    """Read ground truth (class -> member surfaces) from a JSON-lines file."""
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{line_no}: bad JSON: {exc}") from None
            if "class" not in rec or "entities" not in rec:
                raise CorpusFormatError(
                    f"{path}:{line_no}: record needs 'class' and 'entities'"
                )
            truth[str(rec["class"])] = [normalize_text(s) for s in rec["entities"]]
    if not truth:
        raise CorpusFormatError(f"{path}: no truth records found")
    return truth


def save_seed_queries(queries, path):
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            rec = {"class": q.class_name, "seeds": q.seeds}
            if q.truth is not None:
                rec["truth"] = q.truth
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_truth(truth: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in truth:
            fh.write(
                json.dumps({"class": name, "entities": truth[name]}, sort_keys=True)
                + "\n"
            )
