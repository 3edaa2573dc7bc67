# cython: language_level=3
"""Compiled implementations of the numerical kernels.

Same contracts as ``entexpand.kernels._backend_numpy``.  Dense matrix
products are delegated to numpy's BLAS; the ragged pooling, scatter-adds,
and fused elementwise passes (GeLU, softmax, smoothed loss, contrastive
terms) run as C loops.  Results agree with the numpy backend to
floating-point accumulation order.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, tanh

cdef double SQRT_2_OVER_PI = 0.7978845608028654
cdef double GELU_CUBIC = 0.044715
cdef double LOG_FLOOR = 1e-12


cdef inline double _floored(double x, double f) nogil:
    # NaN compares false and passes through, matching np.maximum semantics
    return f if x < f else x


cdef inline double _gelu(double x) nogil:
    cdef double inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
    return 0.5 * x * (1.0 + tanh(inner))


cdef inline double _gelu_prime(double x) nogil:
    cdef double inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
    cdef double th = tanh(inner)
    cdef double d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner


cdef _as_f8(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


cdef _as_i8(arr):
    return np.ascontiguousarray(arr, dtype=np.int64)


cdef void _softmax_rows_inplace(double[:, ::1] x) nogil:
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(x.shape[0]):
        m = x[i, 0]
        for j in range(1, x.shape[1]):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(x.shape[1]):
            x[i, j] = exp(x[i, j] - m)
            s += x[i, j]
        for j in range(x.shape[1]):
            x[i, j] /= s


cdef _pool_c(long[::1] tok, long[::1] off, double[:, ::1] emb):
    cdef Py_ssize_t b = off.shape[0] - 1
    cdef Py_ssize_t h = emb.shape[1]
    pooled_arr = np.zeros((b, h))
    lens_arr = np.empty(b)
    cdef double[:, ::1] pooled = pooled_arr
    cdef double[::1] lens = lens_arr
    cdef Py_ssize_t i, j, k
    cdef double n
    with nogil:
        for i in range(b):
            n = <double> (off[i + 1] - off[i])
            lens[i] = n
            for j in range(off[i], off[i + 1]):
                for k in range(h):
                    pooled[i, k] += emb[tok[j], k]
            for k in range(h):
                pooled[i, k] /= n
    return pooled_arr, lens_arr


cdef _affine(x_arr, w_arr, b_arr):
    # x @ w.T + b, bias added in a fused pass over the BLAS product
    out_arr = np.dot(x_arr, w_arr.T)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] b = b_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] += b[j]
    return out_arr


cdef _gelu_of(pre_arr):
    act_arr = np.empty_like(pre_arr)
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] act = act_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(pre.shape[0]):
            for j in range(pre.shape[1]):
                act[i, j] = _gelu(pre[i, j])
    return act_arr


cdef _gelu_prime_mul(dout_arr, pre_arr):
    # dout * gelu'(pre), fused
    res_arr = np.empty_like(pre_arr)
    cdef double[:, ::1] dout = dout_arr
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] res = res_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(pre.shape[0]):
            for j in range(pre.shape[1]):
                res[i, j] = dout[i, j] * _gelu_prime(pre[i, j])
    return res_arr


cdef _forward_hidden_c(long[::1] tok, long[::1] off, emb_arr, enc_w_arr,
                       enc_b_arr):
    pooled_arr, lens_arr = _pool_c(tok, off, emb_arr)
    pre_arr = _affine(pooled_arr, enc_w_arr, enc_b_arr)
    return pooled_arr, lens_arr, pre_arr, _gelu_of(pre_arr)


cdef _hidden_backward_c(long[::1] tok, long[::1] off, lens_arr, pooled_arr,
                        pre_enc_arr, dhid_arr, Py_ssize_t v_tok, enc_w_arr):
    dpre_arr = _gelu_prime_mul(dhid_arr, pre_enc_arr)
    d_enc_w = np.dot(dpre_arr.T, pooled_arr)
    d_enc_b = dpre_arr.sum(axis=0)
    dpooled_arr = np.dot(dpre_arr, enc_w_arr)
    d_emb_arr = np.zeros((v_tok, pooled_arr.shape[1]))
    cdef double[:, ::1] dpooled = dpooled_arr
    cdef double[:, ::1] d_emb = d_emb_arr
    cdef double[::1] lens = lens_arr
    cdef Py_ssize_t i, j, k
    with nogil:
        for i in range(dpooled.shape[0]):
            for j in range(off[i], off[i + 1]):
                for k in range(dpooled.shape[1]):
                    d_emb[tok[j], k] += dpooled[i, k] / lens[i]
    return d_emb_arr, d_enc_w, d_enc_b


def hidden_vectors(tok, off, emb, enc_w, enc_b):
    """Encoder output for a ragged batch: GeLU(W * meanpool(emb) + b)."""
    return _forward_hidden_c(
        _as_i8(tok), _as_i8(off), _as_f8(emb), _as_f8(enc_w), _as_f8(enc_b)
    )[3]


def predict_probs(tok, off, emb, enc_w, enc_b, w1, b1, w2, b2):
    """Per-sample entity distributions for a ragged batch, shape (B, V_e)."""
    hid = hidden_vectors(tok, off, emb, enc_w, enc_b)
    h1 = _gelu_of(_affine(hid, _as_f8(w1), _as_f8(b1)))
    logits_arr = _affine(h1, _as_f8(w2), _as_f8(b2))
    cdef double[:, ::1] logits = logits_arr
    with nogil:
        _softmax_rows_inplace(logits)
    return logits_arr


def prediction_loss_grad(tok, off, labels, double eta, emb, enc_w, enc_b,
                         w1, b1, w2, b2):
    """Label-smoothing prediction loss and its analytic gradient.

    Returns ``(loss, per_sample_loss, grads)`` with grads ordered
    ``(emb, enc_w, enc_b, w1, b1, w2, b2)``.
    """
    cdef long[::1] tokv = _as_i8(tok)
    cdef long[::1] offv = _as_i8(off)
    cdef long[::1] lab = _as_i8(labels)
    emb_arr = _as_f8(emb)
    enc_w_arr = _as_f8(enc_w)
    w1_arr = _as_f8(w1)
    w2_arr = _as_f8(w2)

    pooled_arr, lens_arr, pre_enc_arr, hid_arr = _forward_hidden_c(
        tokv, offv, emb_arr, enc_w_arr, _as_f8(enc_b)
    )
    pre1_arr = _affine(hid_arr, w1_arr, _as_f8(b1))
    h1_arr = _gelu_of(pre1_arr)
    probs_arr = _affine(h1_arr, w2_arr, _as_f8(b2))
    cdef double[:, ::1] probs = probs_arr
    cdef Py_ssize_t n = probs.shape[0]
    cdef Py_ssize_t v_e = probs.shape[1]

    per_sample_arr = np.zeros(n)
    dlogits_arr = np.empty((n, v_e))
    cdef double[::1] per_sample = per_sample_arr
    cdef double[:, ::1] dlogits = dlogits_arr
    cdef Py_ssize_t i, j
    cdef double wgt, safe, g, gp, loss
    with nogil:
        _softmax_rows_inplace(probs)
        loss = 0.0
        for i in range(n):
            gp = 0.0
            for j in range(v_e):
                wgt = 1.0 - eta if j == lab[i] else eta
                safe = _floored(probs[i, j], LOG_FLOOR)
                per_sample[i] -= wgt * log(safe)
                g = -wgt / safe if probs[i, j] > LOG_FLOOR else 0.0
                dlogits[i, j] = g
                gp += g * probs[i, j]
            for j in range(v_e):
                dlogits[i, j] = probs[i, j] * (dlogits[i, j] - gp) / (<double> n)
            loss += per_sample[i]
        loss /= <double> n

    d_w2 = np.dot(dlogits_arr.T, h1_arr)
    d_b2 = dlogits_arr.sum(axis=0)
    dh1_arr = np.dot(dlogits_arr, w2_arr)
    dpre1_arr = _gelu_prime_mul(dh1_arr, pre1_arr)
    d_w1 = np.dot(dpre1_arr.T, hid_arr)
    d_b1 = dpre1_arr.sum(axis=0)
    dhid_arr = np.dot(dpre1_arr, w1_arr)
    d_emb, d_enc_w, d_enc_b = _hidden_backward_c(
        tokv, offv, lens_arr, pooled_arr, pre_enc_arr, dhid_arr,
        emb_arr.shape[0], enc_w_arr,
    )
    return loss, per_sample_arr, (
        d_emb, d_enc_w, d_enc_b, d_w1, d_b1, d_w2, d_b2
    )


def project_vectors(tok, off, emb, enc_w, enc_b, pw, pb):
    """Unit-norm projection vectors, shape (B, D), plus pre-norm magnitudes."""
    hid = hidden_vectors(tok, off, emb, enc_w, enc_b)
    z_arr = _affine(hid, _as_f8(pw), _as_f8(pb))
    cdef double[:, ::1] z = z_arr
    nrm_arr = np.empty(z.shape[0])
    cdef double[::1] nrm = nrm_arr
    cdef Py_ssize_t i, j
    cdef double s, div
    with nogil:
        for i in range(z.shape[0]):
            s = 0.0
            for j in range(z.shape[1]):
                s += z[i, j] * z[i, j]
            nrm[i] = sqrt(s)
            div = nrm[i] if nrm[i] > 0.0 else 1.0
            for j in range(z.shape[1]):
                z[i, j] /= div
    return z_arr, nrm_arr


def contrastive_loss_grad(tok, off, double tau_plus, double beta, double t,
                          emb, enc_w, enc_b, pw, pb):
    """Hard-negative contrastive loss and gradient over a paired batch.

    Samples 2m and 2m+1 are partners.  Returns
    ``(loss, per_item_loss, grads, s_neg)`` with grads ordered
    ``(emb, enc_w, enc_b, pw, pb)``; ``s_neg`` is the per-item clamped
    negative-similarity estimate.
    """
    cdef long[::1] tokv = _as_i8(tok)
    cdef long[::1] offv = _as_i8(off)
    emb_arr = _as_f8(emb)
    enc_w_arr = _as_f8(enc_w)
    pw_arr = _as_f8(pw)

    pooled_arr, lens_arr, pre_enc_arr, hid_arr = _forward_hidden_c(
        tokv, offv, emb_arr, enc_w_arr, _as_f8(enc_b)
    )
    z_arr = _affine(hid_arr, pw_arr, _as_f8(pb))
    cdef double[:, ::1] z = z_arr
    cdef Py_ssize_t n2 = z.shape[0]
    cdef Py_ssize_t d = z.shape[1]
    nrm_arr = np.empty(n2)
    cdef double[::1] nrm = nrm_arr
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(n2):
            s = 0.0
            for j in range(d):
                s += z[i, j] * z[i, j]
            nrm[i] = sqrt(s)
    if np.any(nrm_arr < 1e-12):
        raise ValueError("degenerate projection: zero pre-normalization vector")
    with nogil:
        for i in range(n2):
            for j in range(d):
                z[i, j] /= nrm[i]

    sims_arr = np.dot(z_arr, z_arr.T)
    cdef double[:, ::1] sims = sims_arr
    s_pos_arr = np.empty(n2)
    e_hi_arr = np.zeros((n2, n2))
    e_lo_arr = np.zeros((n2, n2))
    a_arr = np.zeros(n2)
    b_arr = np.zeros(n2)
    raw_arr = np.empty(n2)
    s_neg_arr = np.empty(n2)
    per_item_arr = np.empty(n2)
    dsims_arr = np.zeros((n2, n2))
    cdef double[::1] s_pos = s_pos_arr
    cdef double[:, ::1] e_hi = e_hi_arr
    cdef double[:, ::1] e_lo = e_lo_arr
    cdef double[::1] av = a_arr
    cdef double[::1] bv = b_arr
    cdef double[::1] raw = raw_arr
    cdef double[::1] s_neg = s_neg_arr
    cdef double[::1] per_item = per_item_arr
    cdef double[:, ::1] dsims = dsims_arr
    cdef Py_ssize_t partner
    cdef double floor = exp(-1.0 / t)
    cdef double loss = 0.0
    cdef double inv, d_spos, d_stil, unclamped, coef
    with nogil:
        for i in range(n2):
            partner = i ^ 1
            s_pos[i] = exp(sims[i, partner] / t)
            for j in range(n2):
                if j != i and j != partner:
                    e_hi[i, j] = exp((1.0 + beta) * sims[i, j] / t)
                    e_lo[i, j] = exp(beta * sims[i, j] / t)
                    av[i] += e_hi[i, j]
                    bv[i] += e_lo[i, j]
            raw[i] = (-(<double> (n2 - 2)) * tau_plus * s_pos[i]
                      + (<double> (n2 - 2)) * av[i] / bv[i]) / (1.0 - tau_plus)
            s_neg[i] = _floored(raw[i], floor)
            per_item[i] = log(s_pos[i] + s_neg[i]) - log(s_pos[i])
            loss += per_item[i]
        for i in range(n2):
            partner = i ^ 1
            unclamped = 1.0 if raw[i] > floor else 0.0
            inv = 1.0 / (s_pos[i] + s_neg[i])
            d_spos = (inv - 1.0 / s_pos[i]
                      + unclamped * inv * (-(<double> (n2 - 2)) * tau_plus
                                           / (1.0 - tau_plus)))
            d_stil = unclamped * inv / (1.0 - tau_plus)
            dsims[i, partner] += d_spos * s_pos[i] / t
            for j in range(n2):
                if j != i and j != partner:
                    coef = ((<double> (n2 - 2))
                            * (((1.0 + beta) / t) * e_hi[i, j] * bv[i]
                               - (beta / t) * e_lo[i, j] * av[i])
                            / (bv[i] * bv[i]))
                    dsims[i, j] += d_stil * coef

    dz_arr = np.dot(dsims_arr, z_arr) + np.dot(dsims_arr.T, z_arr)
    dv_arr = np.empty((n2, d))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dv = dv_arr
    cdef double dzz
    with nogil:
        for i in range(n2):
            dzz = 0.0
            for j in range(d):
                dzz += dz[i, j] * z[i, j]
            for j in range(d):
                dv[i, j] = (dz[i, j] - dzz * z[i, j]) / nrm[i]
    d_pw = np.dot(dv_arr.T, hid_arr)
    d_pb = dv_arr.sum(axis=0)
    dhid_arr = np.dot(dv_arr, pw_arr)
    d_emb, d_enc_w, d_enc_b = _hidden_backward_c(
        tokv, offv, lens_arr, pooled_arr, pre_enc_arr, dhid_arr,
        emb_arr.shape[0], enc_w_arr,
    )
    return loss, per_item_arr, (d_emb, d_enc_w, d_enc_b, d_pw, d_pb), s_neg_arr


def kl_divergence(p, q, double eps=1e-12):
    """KL(p || q) with both operands floored at ``eps`` and renormalized."""
    cdef double[::1] pv = _as_f8(p)
    cdef double[::1] qv = _as_f8(q)
    cdef Py_ssize_t n = pv.shape[0]
    cdef double ps = 0.0, qs = 0.0, out = 0.0, pf, qf
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ps += _floored(pv[i], eps)
            qs += _floored(qv[i], eps)
        for i in range(n):
            pf = _floored(pv[i], eps) / ps
            qf = _floored(qv[i], eps) / qs
            out += pf * (log(pf) - log(qf))
    return out


def kl_divergence_rows(p, q, double eps=1e-12):
    """Row-wise KL(p_i || q_i) with the same floor-and-renormalize rule."""
    cdef double[:, ::1] pv = _as_f8(p)
    cdef double[:, ::1] qv = _as_f8(q)
    cdef Py_ssize_t n = pv.shape[0]
    cdef Py_ssize_t m = pv.shape[1]
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double ps, qs, pf, qf
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            ps = 0.0
            qs = 0.0
            for j in range(m):
                ps += _floored(pv[i, j], eps)
                qs += _floored(qv[i, j], eps)
            for j in range(m):
                pf = _floored(pv[i, j], eps) / ps
                qf = _floored(qv[i, j], eps) / qs
                out[i] += pf * (log(pf) - log(qf))
    return out_arr


def window_scores(cand_rows, cand_ids, cur_ids, cur_vals, double base_p,
                  double sharpness):
    """Anchor-similarity scores for windowed candidates; -KL(row, anchor)."""
    cdef double[:, ::1] rows = _as_f8(cand_rows)
    cdef long[::1] cids = _as_i8(cand_ids)
    cdef long[::1] cur = _as_i8(cur_ids)
    cdef double[::1] vals = _as_f8(cur_vals)
    cdef Py_ssize_t w_n = rows.shape[0]
    cdef Py_ssize_t v = rows.shape[1]
    d_arr = np.empty(v)
    scores_arr = np.empty(w_n)
    cdef double[::1] d = d_arr
    cdef double[::1] scores = scores_arr
    cdef Py_ssize_t i, j
    cdef double m, s, ps, qs, pf, qf, kl
    with nogil:
        for i in range(w_n):
            for j in range(v):
                d[j] = base_p
            for j in range(cur.shape[0]):
                d[cur[j]] = vals[j]
            d[cids[i]] = rows[i, cids[i]]
            m = sharpness * d[0]
            for j in range(1, v):
                if sharpness * d[j] > m:
                    m = sharpness * d[j]
            s = 0.0
            for j in range(v):
                d[j] = exp(sharpness * d[j] - m)
                s += d[j]
            ps = 0.0
            qs = 0.0
            for j in range(v):
                d[j] /= s
                ps += _floored(rows[i, j], LOG_FLOOR)
                qs += _floored(d[j], LOG_FLOOR)
            kl = 0.0
            for j in range(v):
                pf = _floored(rows[i, j], LOG_FLOOR) / ps
                qf = _floored(d[j], LOG_FLOOR) / qs
                kl += pf * (log(pf) - log(qf))
            scores[i] = -kl
    return scores_arr
