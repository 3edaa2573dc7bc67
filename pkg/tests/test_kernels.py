"""Backend-selection and python/compiled parity tests for the kernels."""

import os
import subprocess
import sys

import numpy as np
import pytest

from entexpand import kernels

try:
    kernels.backend_module("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled backend not built"
)


def make_batch(rng, v_tok=11, v_ent=6, h=8, d=4, n=6):
    """Random ragged batch plus a full parameter set, all float64."""
    lengths = rng.integers(1, 5, size=n)
    off = np.zeros(n + 1, dtype=np.int64)
    off[1:] = np.cumsum(lengths)
    tok = rng.integers(0, v_tok, size=int(off[-1])).astype(np.int64)
    params = {
        "emb": rng.normal(size=(v_tok, h)),
        "enc_w": rng.normal(size=(h, h)) * 0.3,
        "enc_b": rng.normal(size=h) * 0.1,
        "w1": rng.normal(size=(h, h)) * 0.3,
        "b1": rng.normal(size=h) * 0.1,
        "w2": rng.normal(size=(v_ent, h)) * 0.3,
        "b2": rng.normal(size=v_ent) * 0.1,
        "pw": rng.normal(size=(d, h)) * 0.3,
        "pb": rng.normal(size=d) * 0.1,
    }
    labels = rng.integers(0, v_ent, size=n).astype(np.int64)
    return tok, off, labels, params


def test_backend_name_is_known():
    assert kernels.BACKEND in ("python", "compiled")


def test_backend_module_rejects_unknown():
    with pytest.raises(ValueError, match="unknown backend"):
        kernels.backend_module("fortran")


def test_backend_module_python_is_numpy_impl():
    mod = kernels.backend_module("python")
    assert mod.__name__.endswith("_backend_numpy")


def test_gelu_basics():
    assert kernels.gelu(np.array([0.0]))[0] == 0.0
    assert kernels.gelu(np.array([10.0]))[0] == pytest.approx(10.0, abs=1e-6)
    assert kernels.gelu(np.array([-10.0]))[0] == pytest.approx(0.0, abs=1e-6)


def test_gelu_prime_matches_central_difference():
    xs = np.linspace(-4.0, 4.0, 33)
    step = 1e-5
    numeric = (kernels.gelu(xs + step) - kernels.gelu(xs - step)) / (2 * step)
    assert np.allclose(kernels.gelu_prime(xs), numeric, atol=1e-7)


def test_softmax_rows_sums_and_shift_invariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 7))
    s = kernels.softmax_rows(x)
    assert np.allclose(s.sum(axis=1), 1.0)
    shifted = kernels.softmax_rows(x + 3.25)
    assert np.allclose(s, shifted, atol=1e-12)


def test_softmax_rows_known_values():
    s = kernels.softmax_rows(np.array([[0.0, np.log(3.0)]]))
    assert s[0, 0] == pytest.approx(0.25, abs=1e-12)
    assert s[0, 1] == pytest.approx(0.75, abs=1e-12)


def test_forced_python_backend_in_subprocess():
    env = dict(os.environ, ENTEXPAND_KERNELS="python")
    out = subprocess.run(
        [sys.executable, "-c", "import entexpand; print(entexpand.BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0
    assert out.stdout.strip() == "python"


def test_invalid_backend_env_rejected_in_subprocess():
    env = dict(os.environ, ENTEXPAND_KERNELS="bogus")
    out = subprocess.run(
        [sys.executable, "-c", "import entexpand"],
        env=env,
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
    assert "ENTEXPAND_KERNELS" in out.stderr


@needs_compiled
def test_compiled_backend_importable_by_name():
    mod = kernels.backend_module("compiled")
    assert mod.__name__.endswith("_core")


@needs_compiled
def test_parity_hidden_vectors():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(5):
        rng = np.random.default_rng(100 + trial)
        tok, off, _, p = make_batch(rng)
        a = pyb.hidden_vectors(tok, off, p["emb"], p["enc_w"], p["enc_b"])
        b = cyb.hidden_vectors(tok, off, p["emb"], p["enc_w"], p["enc_b"])
        assert np.allclose(a, b, atol=1e-9)


@needs_compiled
def test_parity_predict_probs():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(5):
        rng = np.random.default_rng(200 + trial)
        tok, off, _, p = make_batch(rng)
        args = (p["emb"], p["enc_w"], p["enc_b"], p["w1"], p["b1"], p["w2"], p["b2"])
        a = pyb.predict_probs(tok, off, *args)
        b = cyb.predict_probs(tok, off, *args)
        assert np.allclose(a, b, atol=1e-9)
        assert np.allclose(b.sum(axis=1), 1.0)


@needs_compiled
def test_parity_prediction_loss_grad():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(5):
        rng = np.random.default_rng(300 + trial)
        tok, off, labels, p = make_batch(rng)
        args = (p["emb"], p["enc_w"], p["enc_b"], p["w1"], p["b1"], p["w2"], p["b2"])
        la, pa, ga = pyb.prediction_loss_grad(tok, off, labels, 0.1, *args)
        lb, pb_, gb = cyb.prediction_loss_grad(tok, off, labels, 0.1, *args)
        assert la == pytest.approx(lb, abs=1e-9)
        assert np.allclose(pa, pb_, atol=1e-9)
        assert len(ga) == len(gb) == 7
        for x, y in zip(ga, gb):
            assert np.allclose(x, y, atol=1e-9)


@needs_compiled
def test_parity_project_vectors():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(5):
        rng = np.random.default_rng(400 + trial)
        tok, off, _, p = make_batch(rng)
        za, na = pyb.project_vectors(tok, off, p["emb"], p["enc_w"], p["enc_b"],
                                     p["pw"], p["pb"])
        zb, nb = cyb.project_vectors(tok, off, p["emb"], p["enc_w"], p["enc_b"],
                                     p["pw"], p["pb"])
        assert np.allclose(za, zb, atol=1e-9)
        assert np.allclose(na, nb, atol=1e-9)
        assert np.allclose(np.linalg.norm(zb, axis=1), 1.0)


@needs_compiled
def test_parity_contrastive_loss_grad():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(5):
        rng = np.random.default_rng(500 + trial)
        tok, off, _, p = make_batch(rng, n=6)
        args = (0.05, 1.0, 0.5, p["emb"], p["enc_w"], p["enc_b"], p["pw"], p["pb"])
        la, pa, ga, sa = pyb.contrastive_loss_grad(tok, off, *args)
        lb, pb_, gb, sb = cyb.contrastive_loss_grad(tok, off, *args)
        assert la == pytest.approx(lb, abs=1e-9)
        assert np.allclose(pa, pb_, atol=1e-9)
        assert np.allclose(sa, sb, atol=1e-9)
        assert len(ga) == len(gb) == 5
        for x, y in zip(ga, gb):
            assert np.allclose(x, y, atol=1e-9)


@needs_compiled
def test_compiled_contrastive_rejects_degenerate_projection():
    cyb = kernels.backend_module("compiled")
    rng = np.random.default_rng(6)
    tok, off, _, p = make_batch(rng, n=4)
    zero_pw = np.zeros_like(p["pw"])
    zero_pb = np.zeros_like(p["pb"])
    with pytest.raises(ValueError, match="degenerate projection"):
        cyb.contrastive_loss_grad(tok, off, 0.05, 1.0, 0.5, p["emb"],
                                  p["enc_w"], p["enc_b"], zero_pw, zero_pb)


@needs_compiled
def test_parity_kl_divergence():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = rng.dirichlet(np.ones(9))
        q = rng.dirichlet(np.ones(9))
        assert cyb.kl_divergence(p, q) == pytest.approx(
            pyb.kl_divergence(p, q), abs=1e-12
        )
    # zero entries exercise the floor-and-renormalize path
    p = np.array([1.0, 0.0])
    q = np.array([0.5, 0.5])
    assert cyb.kl_divergence(p, q) == pytest.approx(
        pyb.kl_divergence(p, q), abs=1e-12
    )


@needs_compiled
def test_parity_kl_divergence_rows():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    rng = np.random.default_rng(8)
    P = rng.dirichlet(np.ones(9), size=6)
    Q = rng.dirichlet(np.ones(9), size=6)
    assert np.allclose(
        cyb.kl_divergence_rows(P, Q), pyb.kl_divergence_rows(P, Q), atol=1e-12
    )


@needs_compiled
def test_parity_window_scores():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    for trial in range(20):
        rng = np.random.default_rng(900 + trial)
        v = int(rng.integers(4, 14))
        w = int(rng.integers(1, 6))
        rows = rng.dirichlet(np.ones(v), size=w)
        cand_ids = rng.choice(v, size=w, replace=False).astype(np.int64)
        n_cur = int(rng.integers(0, min(3, v)))
        cur_ids = rng.choice(v, size=n_cur, replace=False).astype(np.int64)
        cur_vals = rng.uniform(0.05, 0.5, size=n_cur)
        args = (rows, cand_ids, cur_ids, cur_vals, 1.0 / v, 1.0)
        assert np.allclose(
            cyb.window_scores(*args), pyb.window_scores(*args), atol=1e-12
        )


@needs_compiled
def test_parity_window_scores_nonunit_sharpness():
    pyb = kernels.backend_module("python")
    cyb = kernels.backend_module("compiled")
    rng = np.random.default_rng(42)
    rows = rng.dirichlet(np.ones(8), size=3)
    cand_ids = np.array([1, 4, 6], dtype=np.int64)
    args = (rows, cand_ids, np.array([0], dtype=np.int64),
            np.array([0.4]), 1.0 / 8, 2.5)
    assert np.allclose(
        cyb.window_scores(*args), pyb.window_scores(*args), atol=1e-12
    )
