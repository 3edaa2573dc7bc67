"""Model selection by seed-representation consistency, and the ensembled
prediction cache.

A model that predicts similar distributions for the seed entities of a
class is expected to expand that class well; models are scored by the
negated mean pairwise KL divergence between seed representations,
aggregated across classes by a negated geometric mean, and the top-k
models' per-entity distributions are averaged into a persisted cache.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import all_entity_representations

SCORE_FLOOR = 1e-12

CACHE_MAGIC = b"EEPC"
CACHE_VERSION = 1
DENSE_MAX_VE = 20000
SPARSE_TOP_M = 4096


@dataclass
class ClassScore:
    class_id: object
    score: float


def kl_div(p, q) -> float:
    """KL(p || q); operands floored at 1e-12 and renormalized."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    return kernels.kl_divergence(p, q)


def score_model_on_class(model_reps, seeds, class_id=None) -> ClassScore:
    """Negated mean pairwise KL divergence between seed representations.

    ``model_reps`` maps entity id to its distribution (a dict or an array
    indexed by entity id); ``seeds`` lists M >= 2 entity ids.  The score
    sums KL over all ordered pairs and divides by M(M-1); 0 is best.
    """
    m = len(seeds)
    if m < 2:
        raise ValueError("need at least 2 seeds to score a class")
    reps = [np.asarray(model_reps[e], dtype=np.float64) for e in seeds]
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                total += kernels.kl_divergence(reps[i], reps[j])
    return ClassScore(class_id=class_id, score=-total / (m * (m - 1)))


def score_model_overall(class_scores) -> float:
    """Negated geometric mean of class score magnitudes.

    Computed as the mean of logs with magnitudes floored at 1e-12; the
    result is non-positive and closer to 0 is better.
    """
    scores = list(class_scores)
    if not scores:
        raise ValueError("need at least one class score")
    mags = [max(abs(cs.score if isinstance(cs, ClassScore) else cs), SCORE_FLOOR) for cs in scores]
    return -float(np.exp(np.mean(np.log(mags))))


def score_models(rep_list, class_seed_ids: dict) -> list:
    """Overall score for each model's representation table."""
    out = []
    for reps in rep_list:
        per_class = [
            score_model_on_class(reps, seed_ids, class_id=name)
            for name, seed_ids in sorted(class_seed_ids.items())
        ]
        out.append(score_model_overall(per_class))
    return out


def select_top_k(rep_list, class_seed_ids: dict, k: int):
    """Indices of the k best-scoring models, plus all overall scores.

    Models are ordered by overall score descending (toward 0), ties by
    model index ascending.
    """
    if k > len(rep_list):
        raise ValueError(f"k={k} exceeds number of models {len(rep_list)}")
    scores = score_models(rep_list, class_seed_ids)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[:k], scores


@dataclass
class PredictionCache:
    """Ensembled per-entity predicted distributions, one row per entity."""

    rows: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.rows.shape[1]:
            raise ValueError("cache rows must be a square (V_e, V_e) matrix")
        sums = self.rows.sum(axis=1)
        if np.any(self.rows < 0) or np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("cache rows must be probability distributions")
        self.provenance = tuple(self.provenance)

    @property
    def v_e(self) -> int:
        return self.rows.shape[0]

    def row(self, entity_id: int):
        return self.rows[entity_id]

    def top(self, entity_id: int, n: int = 10):
        """(entity_id, probability) pairs for the n most-predicted entities."""
        row = self.rows[entity_id]
        order = np.argsort(-row, kind="stable")[:n]
        return [(int(e), float(row[e])) for e in order]

    def save(self, path, sparse=None, top_m: int = SPARSE_TOP_M):
        """Write the cache; dense rows up to V_e=20000, sparse beyond.

        Sparse rows keep the top_m probabilities per row and spread the
        residual mass uniformly over the remaining entities on load.
        """
        if sparse is None:
            sparse = self.v_e > DENSE_MAX_VE
        blob = bytearray()
        blob += CACHE_MAGIC
        blob += struct.pack(
            "<IBII", CACHE_VERSION, 1 if sparse else 0, self.v_e, len(self.provenance)
        )
        for hexdigest in self.provenance:
            raw = bytes.fromhex(hexdigest)
            if len(raw) != 32:
                raise ValueError("provenance entries must be sha256 hex digests")
            blob += raw
        if sparse:
            blob += struct.pack("<I", top_m)
            for row in self.rows:
                m = min(top_m, self.v_e)
                keep = np.sort(np.argpartition(-row, m - 1)[:m]) if m < self.v_e else np.arange(self.v_e)
                blob += struct.pack("<I", len(keep))
                blob += keep.astype("<u4").tobytes()
                blob += row[keep].astype("<f8").tobytes()
        else:
            blob += np.ascontiguousarray(self.rows, dtype="<f8").tobytes()
        blob += hashlib.sha256(bytes(blob)).digest()
        with open(path, "wb") as fh:
            fh.write(bytes(blob))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 4 + 13 + 32 or blob[:4] != CACHE_MAGIC:
            raise ValueError(f"{path}: not a prediction cache")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ValueError(f"{path}: cache checksum mismatch")
        version, sparse_flag, v_e, n_prov = struct.unpack_from("<IBII", body, 4)
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        pos = 17
        provenance = []
        for _ in range(n_prov):
            provenance.append(body[pos : pos + 32].hex())
            pos += 32
        if sparse_flag:
            pos += 4
            rows = np.empty((v_e, v_e))
            for r in range(v_e):
                (m,) = struct.unpack_from("<I", body, pos)
                pos += 4
                idx = np.frombuffer(body, dtype="<u4", count=m, offset=pos)
                pos += 4 * m
                vals = np.frombuffer(body, dtype="<f8", count=m, offset=pos)
                pos += 8 * m
                residual = max(1.0 - float(vals.sum()), 0.0)
                fill = residual / (v_e - m) if v_e > m else 0.0
                rows[r] = fill
                rows[r, idx] = vals
        else:
            rows = (
                np.frombuffer(body, dtype="<f8", count=v_e * v_e, offset=pos)
                .reshape(v_e, v_e)
                .astype(np.float64)
            )
            pos += v_e * v_e * 8
        if pos != len(body):
            raise ValueError(f"{path}: trailing bytes in cache")
        return cls(rows=rows, provenance=tuple(provenance))


def cache_from_representations(rep_matrices, provenance=()) -> PredictionCache:
    """Average per-model representation tables into a cache."""
    mats = [np.asarray(m, dtype=np.float64) for m in rep_matrices]
    if not mats:
        raise ValueError("need at least one representation table")
    return PredictionCache(rows=np.mean(mats, axis=0), provenance=provenance)


def build_prediction_cache(models, corpus, provenance=()) -> PredictionCache:
    """Compute each model's entity representations and average them."""
    if not models:
        raise ValueError("need at least one model")
    reps = [all_entity_representations(p, corpus) for p in models]
    return cache_from_representations(reps, provenance=provenance)
