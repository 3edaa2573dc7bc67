"""Pure-numpy implementations of the numerical kernels.

Mirrors the compiled extension ``entexpand.kernels._core``; used as the
fallback backend when the extension is not built.  All functions take and
return plain float64/int64 arrays.  Batches of tokenized samples arrive in
ragged form: a flat token-id vector ``tok`` plus an offsets vector ``off``
of length B+1, sample ``i`` owning ``tok[off[i]:off[i+1]]``.
"""

import numpy as np

SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC = 0.044715
LOG_FLOOR = 1e-12


def gelu(x):
    """GeLU, tanh approximation (fixed project-wide for bit-stable grads)."""
    inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_prime(x):
    inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
    th = np.tanh(inner)
    d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _pool(tok, off, emb):
    sums = np.add.reduceat(emb[tok], off[:-1], axis=0)
    lens = np.diff(off).astype(np.float64)
    return sums / lens[:, None], lens


def _forward_hidden(tok, off, emb, enc_w, enc_b):
    pooled, lens = _pool(tok, off, emb)
    pre = pooled @ enc_w.T + enc_b
    return pooled, lens, pre, gelu(pre)


def _hidden_backward(tok, off, lens, pooled, pre_enc, dhid, v_tok, enc_w):
    dpre = dhid * gelu_prime(pre_enc)
    d_enc_w = dpre.T @ pooled
    d_enc_b = dpre.sum(axis=0)
    dpooled = dpre @ enc_w
    d_emb = np.zeros((v_tok, pooled.shape[1]))
    seg = np.repeat(np.arange(lens.size), lens.astype(np.int64))
    np.add.at(d_emb, tok, dpooled[seg] / lens[seg, None])
    return d_emb, d_enc_w, d_enc_b


def hidden_vectors(tok, off, emb, enc_w, enc_b):
    """Encoder output for a ragged batch: GeLU(W * meanpool(emb) + b)."""
    return _forward_hidden(tok, off, emb, enc_w, enc_b)[3]


def predict_probs(tok, off, emb, enc_w, enc_b, w1, b1, w2, b2):
    """Per-sample entity distributions for a ragged batch, shape (B, V_e)."""
    hid = hidden_vectors(tok, off, emb, enc_w, enc_b)
    h1 = gelu(hid @ w1.T + b1)
    return softmax_rows(h1 @ w2.T + b2)


def prediction_loss_grad(tok, off, labels, eta, emb, enc_w, enc_b, w1, b1, w2, b2):
    """Label-smoothing prediction loss and its analytic gradient.

    Returns ``(loss, per_sample_loss, grads)`` with grads ordered
    ``(emb, enc_w, enc_b, w1, b1, w2, b2)``.
    """
    pooled, lens, pre_enc, hid = _forward_hidden(tok, off, emb, enc_w, enc_b)
    pre1 = hid @ w1.T + b1
    h1 = gelu(pre1)
    logits = h1 @ w2.T + b2
    probs = softmax_rows(logits)
    n = probs.shape[0]

    w = np.full_like(probs, eta)
    w[np.arange(n), labels] = 1.0 - eta
    safe = np.maximum(probs, LOG_FLOOR)
    per_sample = -(w * np.log(safe)).sum(axis=1)
    loss = float(per_sample.mean())

    # dl/dp is zero where the floor is active, so saturated entries do not
    # propagate; elsewhere it is -w/p.
    g = np.where(probs > LOG_FLOOR, -w / safe, 0.0)
    dlogits = probs * (g - (g * probs).sum(axis=1, keepdims=True))
    dlogits /= n

    d_w2 = dlogits.T @ h1
    d_b2 = dlogits.sum(axis=0)
    dh1 = dlogits @ w2
    dpre1 = dh1 * gelu_prime(pre1)
    d_w1 = dpre1.T @ hid
    d_b1 = dpre1.sum(axis=0)
    dhid = dpre1 @ w1
    d_emb, d_enc_w, d_enc_b = _hidden_backward(
        tok, off, lens, pooled, pre_enc, dhid, emb.shape[0], enc_w
    )
    return loss, per_sample, (d_emb, d_enc_w, d_enc_b, d_w1, d_b1, d_w2, d_b2)


def project_vectors(tok, off, emb, enc_w, enc_b, pw, pb):
    """Unit-norm projection vectors, shape (B, D), plus pre-norm magnitudes."""
    hid = hidden_vectors(tok, off, emb, enc_w, enc_b)
    v = hid @ pw.T + pb
    nrm = np.linalg.norm(v, axis=1)
    z = v / np.where(nrm > 0.0, nrm, 1.0)[:, None]
    return z, nrm


def contrastive_loss_grad(tok, off, tau_plus, beta, t, emb, enc_w, enc_b, pw, pb):
    """Hard-negative contrastive loss and gradient over a paired batch.

    Samples 2m and 2m+1 are partners.  Returns
    ``(loss, per_item_loss, grads, s_neg)`` with grads ordered
    ``(emb, enc_w, enc_b, pw, pb)``; ``s_neg`` is the per-item clamped
    negative-similarity estimate, exposed so callers can assert the
    clamp invariant.
    """
    pooled, lens, pre_enc, hid = _forward_hidden(tok, off, emb, enc_w, enc_b)
    v = hid @ pw.T + pb
    nrm = np.linalg.norm(v, axis=1)
    if np.any(nrm < 1e-12):
        raise ValueError("degenerate projection: zero pre-normalization vector")
    z = v / nrm[:, None]

    n2 = z.shape[0]
    idx = np.arange(n2)
    partner = idx ^ 1
    sims = z @ z.T
    s_pos = np.exp(sims[idx, partner] / t)

    mask = np.ones((n2, n2), dtype=bool)
    mask[idx, idx] = False
    mask[idx, partner] = False
    e_hi = np.where(mask, np.exp((1.0 + beta) * sims / t), 0.0)
    e_lo = np.where(mask, np.exp(beta * sims / t), 0.0)
    a = e_hi.sum(axis=1)
    b = e_lo.sum(axis=1)
    s_tilde = (n2 - 2) * a / b

    raw = (-(n2 - 2) * tau_plus * s_pos + s_tilde) / (1.0 - tau_plus)
    floor = np.exp(-1.0 / t)
    s_neg = np.maximum(raw, floor)
    unclamped = (raw > floor).astype(np.float64)

    per_item = np.log(s_pos + s_neg) - np.log(s_pos)
    loss = float(per_item.sum())

    inv = 1.0 / (s_pos + s_neg)
    d_spos = inv - 1.0 / s_pos + unclamped * inv * (-(n2 - 2) * tau_plus / (1.0 - tau_plus))
    d_stil = unclamped * inv / (1.0 - tau_plus)

    dsims = np.zeros_like(sims)
    dsims[idx, partner] += d_spos * s_pos / t
    coef = (n2 - 2) * (
        ((1.0 + beta) / t) * e_hi * b[:, None] - (beta / t) * e_lo * a[:, None]
    ) / (b * b)[:, None]
    dsims += d_stil[:, None] * coef

    dz = dsims @ z + dsims.T @ z
    dv = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / nrm[:, None]
    d_pw = dv.T @ hid
    d_pb = dv.sum(axis=0)
    dhid = dv @ pw
    d_emb, d_enc_w, d_enc_b = _hidden_backward(
        tok, off, lens, pooled, pre_enc, dhid, emb.shape[0], enc_w
    )
    return loss, per_item, (d_emb, d_enc_w, d_enc_b, d_pw, d_pb), s_neg


def kl_divergence(p, q, eps=1e-12):
    """KL(p || q) with both operands floored at ``eps`` and renormalized."""
    pf = np.maximum(p, eps)
    pf = pf / pf.sum()
    qf = np.maximum(q, eps)
    qf = qf / qf.sum()
    return float((pf * (np.log(pf) - np.log(qf))).sum())


def kl_divergence_rows(p, q, eps=1e-12):
    """Row-wise KL(p_i || q_i) with the same floor-and-renormalize rule."""
    pf = np.maximum(p, eps)
    pf = pf / pf.sum(axis=1, keepdims=True)
    qf = np.maximum(q, eps)
    qf = qf / qf.sum(axis=1, keepdims=True)
    return (pf * (np.log(pf) - np.log(qf))).sum(axis=1)


def window_scores(cand_rows, cand_ids, cur_ids, cur_vals, base_p, sharpness):
    """Anchor-similarity scores for windowed candidates.

    ``cand_rows[i]`` is candidate i's cached distribution.  The anchor for
    candidate i starts at ``base_p`` everywhere, carries ``cur_vals`` at the
    current-set indices and the candidate's own probability at its index,
    and is then softmaxed (scaled by ``sharpness``).  Score is -KL(row, anchor).
    """
    w_n = cand_rows.shape[0]
    d = np.full(cand_rows.shape, base_p)
    d[:, cur_ids] = cur_vals
    rows = np.arange(w_n)
    d[rows, cand_ids] = cand_rows[rows, cand_ids]
    anchors = softmax_rows(sharpness * d)
    return -kl_divergence_rows(cand_rows, anchors)
