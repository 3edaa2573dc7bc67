"""Entity-level masked prediction model.

Architecture: mean-pooled token embeddings (the mask token included) pass
through one GeLU encoder layer; a two-layer GeLU classification head with
softmax yields a distribution over the entity vocabulary; a linear
projection head followed by L2 normalization yields contrastive feature
vectors.  Everything is float64 with analytic gradients.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import pack_samples

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EEMC"
CHECKPOINT_VERSION = 1

PARAM_FIELDS = (
    "token_emb",
    "enc_w",
    "enc_b",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
    "proj_w",
    "proj_b",
)


@dataclass
class ModelDims:
    v_t: int
    v_e: int
    h: int = 64
    d: int = 32

    def __post_init__(self):
        for name in ("v_t", "v_e", "h", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"dimension {name} must be >= 1")
        if self.d > self.h:
            logger.warning("projection width d=%d exceeds hidden h=%d", self.d, self.h)


@dataclass
class ModelParams:
    token_emb: np.ndarray
    enc_w: np.ndarray
    enc_b: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            v_t=self.token_emb.shape[0],
            v_e=self.head_w2.shape[0],
            h=self.enc_w.shape[0],
            d=self.proj_w.shape[0],
        )

    def arrays(self):
        return tuple(getattr(self, f) for f in PARAM_FIELDS)

    def copy(self):
        return ModelParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, dims: ModelDims):
        return cls(
            token_emb=np.zeros((dims.v_t, dims.h)),
            enc_w=np.zeros((dims.h, dims.h)),
            enc_b=np.zeros(dims.h),
            head_w1=np.zeros((dims.h, dims.h)),
            head_b1=np.zeros(dims.h),
            head_w2=np.zeros((dims.v_e, dims.h)),
            head_b2=np.zeros(dims.v_e),
            proj_w=np.zeros((dims.d, dims.h)),
            proj_b=np.zeros(dims.d),
        )


def init_params(dims: ModelDims, rng_seed: int) -> ModelParams:
    """Initialize parameters: Kaiming-uniform weights, zero biases.

    Token embeddings are uniform in [-0.05, 0.05]; each weight matrix
    (out, in) is uniform in +-sqrt(6 / fan_in); all biases start at 0.
    """
    rng = np.random.default_rng(rng_seed)

    def kaiming(shape):
        bound = np.sqrt(6.0 / shape[1])
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        token_emb=rng.uniform(-0.05, 0.05, size=(dims.v_t, dims.h)),
        enc_w=kaiming((dims.h, dims.h)),
        enc_b=np.zeros(dims.h),
        head_w1=kaiming((dims.h, dims.h)),
        head_b1=np.zeros(dims.h),
        head_w2=kaiming((dims.v_e, dims.h)),
        head_b2=np.zeros(dims.v_e),
        proj_w=kaiming((dims.d, dims.h)),
        proj_b=np.zeros(dims.d),
    )


def _check_token_ids(tok, v_t):
    if tok.size and (tok.min() < 0 or tok.max() >= v_t):
        raise ValueError(f"token id out of range [0, {v_t})")


def encode_packed(params: ModelParams, tok, off):
    _check_token_ids(tok, params.token_emb.shape[0])
    return kernels.hidden_vectors(tok, off, params.token_emb, params.enc_w, params.enc_b)


def predict_packed(params: ModelParams, tok, off):
    _check_token_ids(tok, params.token_emb.shape[0])
    return kernels.predict_probs(
        tok,
        off,
        params.token_emb,
        params.enc_w,
        params.enc_b,
        params.head_w1,
        params.head_b1,
        params.head_w2,
        params.head_b2,
    )


def project_packed(params: ModelParams, tok, off):
    _check_token_ids(tok, params.token_emb.shape[0])
    z, prenorm = kernels.project_vectors(
        tok, off, params.token_emb, params.enc_w, params.enc_b, params.proj_w, params.proj_b
    )
    if np.any(prenorm < 1e-12):
        raise ValueError("degenerate projection: zero pre-normalization vector")
    return z


def encode(params: ModelParams, sample):
    """Hidden vector for one masked sample."""
    tok, off, _ = pack_samples([sample])
    return encode_packed(params, tok, off)[0]


def predict(params: ModelParams, sample):
    """Entity distribution for one masked sample."""
    tok, off, _ = pack_samples([sample])
    return predict_packed(params, tok, off)[0]


def project(params: ModelParams, sample):
    """Unit-norm projection vector for one masked sample."""
    tok, off, _ = pack_samples([sample])
    return project_packed(params, tok, off)[0]


def entity_representation(params: ModelParams, corpus, entity_id: int):
    """Mean predicted distribution over all of the entity's samples."""
    idxs = corpus.samples_of.get(entity_id)
    if not idxs:
        raise ValueError(f"entity {entity_id} has no samples")
    tok, off, _ = pack_samples([corpus.samples[i] for i in idxs])
    return predict_packed(params, tok, off).mean(axis=0)


def all_entity_representations(params: ModelParams, corpus, chunk: int = 2048):
    """Representations for every entity, shape (V_e, V_e).

    Prediction runs in chunks over the whole corpus; rows are per-entity
    means.  Every entity must have at least one sample.
    """
    v_e = params.head_w2.shape[0]
    missing = [e for e in range(v_e) if not corpus.samples_of.get(e)]
    if missing:
        raise ValueError(f"entities with no samples: {missing}")
    sums = np.zeros((v_e, v_e))
    counts = np.zeros(v_e)
    samples = corpus.samples
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        tok, off, labels = pack_samples(part)
        probs = predict_packed(params, tok, off)
        np.add.at(sums, labels, probs)
        np.add.at(counts, labels, 1.0)
    return sums / counts[:, None]


@dataclass
class LossSpec:
    """Selects the loss mode for loss_and_grad.

    mode 'prediction' uses ``eta`` (label smoothing); mode 'contrastive'
    uses ``tau_plus``, ``beta``, ``t`` and expects the batch arranged in
    consecutive pairs.
    """

    mode: str
    eta: float = 0.0
    tau_plus: float = 0.0
    beta: float = 0.0
    t: float = 0.5

    def __post_init__(self):
        if self.mode not in ("prediction", "contrastive"):
            raise ValueError("mode must be 'prediction' or 'contrastive'")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must be in [0, 1)")
        if not 0.0 <= self.tau_plus < 1.0:
            raise ValueError("tau_plus must be in [0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.t <= 0.0:
            raise ValueError("t must be > 0")


def _raise_non_finite(per_sample):
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise ValueError(f"non-finite loss at sample index {int(bad[0])}")


def loss_and_grad(params: ModelParams, batch, loss_spec: LossSpec):
    """Loss and analytic gradient over a batch of MaskedSample.

    Returns (loss, grads) where grads is a ModelParams holding the
    gradient; parameters the selected loss does not touch get zero
    gradient arrays.
    """
    if not batch:
        raise ValueError("empty batch")
    tok, off, labels = pack_samples(batch)
    _check_token_ids(tok, params.token_emb.shape[0])
    grads = ModelParams.zeros(params.dims)

    if loss_spec.mode == "prediction":
        loss, per_sample, g = kernels.prediction_loss_grad(
            tok,
            off,
            labels,
            loss_spec.eta,
            params.token_emb,
            params.enc_w,
            params.enc_b,
            params.head_w1,
            params.head_b1,
            params.head_w2,
            params.head_b2,
        )
        _raise_non_finite(per_sample)
        (
            grads.token_emb,
            grads.enc_w,
            grads.enc_b,
            grads.head_w1,
            grads.head_b1,
            grads.head_w2,
            grads.head_b2,
        ) = g
        return loss, grads

    if len(batch) % 2 or len(batch) < 4:
        raise ValueError("contrastive batch must have even length >= 4")
    loss, per_item, g, s_neg = kernels.contrastive_loss_grad(
        tok,
        off,
        loss_spec.tau_plus,
        loss_spec.beta,
        loss_spec.t,
        params.token_emb,
        params.enc_w,
        params.enc_b,
        params.proj_w,
        params.proj_b,
    )
    _raise_non_finite(per_item)
    floor = np.exp(-1.0 / loss_spec.t)
    if np.any(s_neg < floor - 1e-15):
        raise AssertionError("negative-similarity clamp violated")
    grads.token_emb, grads.enc_w, grads.enc_b, grads.proj_w, grads.proj_b = g
    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators for the decoupled-decay optimizer."""

    step: int
    m: tuple
    v: tuple

    @classmethod
    def init(cls, params: ModelParams):
        return cls(
            step=0,
            m=tuple(np.zeros_like(a) for a in params.arrays()),
            v=tuple(np.zeros_like(a) for a in params.arrays()),
        )


BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-6
WEIGHT_DECAY = 1e-2


def optimizer_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    weight_decay: float = WEIGHT_DECAY,
):
    """One adaptive-moment update with decoupled weight decay, in place.

    betas (0.9, 0.999), epsilon 1e-6, bias-corrected moments; decay is
    applied to every parameter tensor before the moment update.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for i, name in enumerate(PARAM_FIELDS):
        p = getattr(params, name)
        g = getattr(grads, name)
        m = state.m[i]
        v = state.v[i]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params, state


def save_checkpoint(path, params: ModelParams, seed: int, lineage: str = ""):
    """Write a versioned binary checkpoint.

    Layout (all integers little-endian): magic 'EEMC', u32 version, u32
    v_t/v_e/h/d, u64 seed, u32 lineage byte length + UTF-8 lineage, then
    the nine parameter tensors as row-major float64, ending with the
    SHA-256 digest of everything before it.
    """
    dims = params.dims
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<IIIII", CHECKPOINT_VERSION, dims.v_t, dims.v_e, dims.h, dims.d)
    blob += struct.pack("<Q", seed % (1 << 64))
    lineage_bytes = lineage.encode("utf-8")
    blob += struct.pack("<I", len(lineage_bytes))
    blob += lineage_bytes
    for a in params.arrays():
        blob += np.ascontiguousarray(a, dtype="<f8").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (params, seed, lineage).

    Verifies magic, version, and the trailing SHA-256 digest.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 20 + 8 + 4 + 32 or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"{path}: checkpoint checksum mismatch")
    version, v_t, v_e, h, d = struct.unpack_from("<IIIII", body, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (seed,) = struct.unpack_from("<Q", body, 24)
    (lineage_len,) = struct.unpack_from("<I", body, 32)
    pos = 36 + lineage_len
    lineage = body[36:pos].decode("utf-8")
    dims = ModelDims(v_t=v_t, v_e=v_e, h=h, d=d)
    shapes = [a.shape for a in ModelParams.zeros(dims).arrays()]
    tensors = []
    for shape in shapes:
        n = int(np.prod(shape)) * 8
        tensors.append(
            np.frombuffer(body, dtype="<f8", count=int(np.prod(shape)), offset=pos)
            .reshape(shape)
            .astype(np.float64)
        )
        pos += n
    if pos != len(body):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(*tensors), seed, lineage


def checkpoint_checksum(path) -> str:
    """SHA-256 hex digest of a checkpoint file's bytes."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def check_distribution(p, tol: float = 1e-6):
    p = np.asarray(p)
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > tol:
        raise ValueError("invalid probability distribution")
    return p


def check_unit(z, tol: float = 1e-6):
    z = np.asarray(z)
    if abs(float(np.linalg.norm(z)) - 1.0) > tol:
        raise ValueError("projection vector is not unit norm")
    return z
