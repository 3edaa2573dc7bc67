"""Benchmark the numerical kernels: pure-numpy backend vs compiled extension.

Usage:
    python3 benchmarks/bench_kernels.py [--batch 64] [--repeats 50]

Each kernel is timed as best-of-N wall clock on identical inputs; the table
reports per-call time for both backends and the speedup factor.
"""

import argparse
import time

import numpy as np

from entexpand import kernels


def make_inputs(rng, batch, v_tok, v_ent, h, d):
    lengths = rng.integers(3, 9, size=batch)
    off = np.zeros(batch + 1, dtype=np.int64)
    off[1:] = np.cumsum(lengths)
    tok = rng.integers(0, v_tok, size=int(off[-1])).astype(np.int64)
    labels = rng.integers(0, v_ent, size=batch).astype(np.int64)
    params = {
        "emb": rng.normal(size=(v_tok, h)) * 0.05,
        "enc_w": rng.normal(size=(h, h)) * 0.1,
        "enc_b": np.zeros(h),
        "w1": rng.normal(size=(h, h)) * 0.1,
        "b1": np.zeros(h),
        "w2": rng.normal(size=(v_ent, h)) * 0.1,
        "b2": np.zeros(v_ent),
        "pw": rng.normal(size=(d, h)) * 0.1,
        "pb": rng.normal(size=d) * 0.1,
    }
    return tok, off, labels, params


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--proj", type=int, default=32)
    ap.add_argument("--vocab-tokens", type=int, default=500)
    ap.add_argument("--vocab-entities", type=int, default=240)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        compiled = kernels.backend_module("compiled")
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return 1
    python = kernels.backend_module("python")

    rng = np.random.default_rng(args.seed)
    tok, off, labels, p = make_inputs(
        rng, args.batch, args.vocab_tokens, args.vocab_entities,
        args.hidden, args.proj,
    )
    pred_args = (p["emb"], p["enc_w"], p["enc_b"], p["w1"], p["b1"],
                 p["w2"], p["b2"])
    proj_args = (p["emb"], p["enc_w"], p["enc_b"], p["pw"], p["pb"])

    v = args.vocab_entities
    rows = rng.dirichlet(np.ones(v), size=8)
    cand_ids = rng.choice(v, size=8, replace=False).astype(np.int64)
    cur_ids = rng.choice(v, size=5, replace=False).astype(np.int64)
    cur_vals = rng.uniform(0.01, 0.2, size=5)
    kl_p = rng.dirichlet(np.ones(v))
    kl_q = rng.dirichlet(np.ones(v))
    kl_rows_p = rng.dirichlet(np.ones(v), size=32)
    kl_rows_q = rng.dirichlet(np.ones(v), size=32)

    cases = [
        ("hidden_vectors",
         lambda m: m.hidden_vectors(tok, off, p["emb"], p["enc_w"], p["enc_b"])),
        ("predict_probs",
         lambda m: m.predict_probs(tok, off, *pred_args)),
        ("prediction_loss_grad",
         lambda m: m.prediction_loss_grad(tok, off, labels, 0.1, *pred_args)),
        ("project_vectors",
         lambda m: m.project_vectors(tok, off, *proj_args)),
        ("contrastive_loss_grad",
         lambda m: m.contrastive_loss_grad(tok, off, 0.05, 1.0, 0.5, *proj_args)),
        ("kl_divergence",
         lambda m: m.kl_divergence(kl_p, kl_q)),
        ("kl_divergence_rows",
         lambda m: m.kl_divergence_rows(kl_rows_p, kl_rows_q)),
        ("window_scores",
         lambda m: m.window_scores(rows, cand_ids, cur_ids, cur_vals, 1.0 / v, 1.0)),
    ]

    print(f"batch={args.batch} hidden={args.hidden} proj={args.proj} "
          f"v_tok={args.vocab_tokens} v_ent={args.vocab_entities} "
          f"repeats={args.repeats}")
    header = f"{'kernel':<24}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        call(python)
        call(compiled)
        t_py = best_of(lambda: call(python), args.repeats)
        t_cy = best_of(lambda: call(compiled), args.repeats)
        ratio = t_py / t_cy if t_cy > 0 else float("inf")
        print(f"{name:<24}{t_py * 1e3:>14.4f}{t_cy * 1e3:>16.4f}{ratio:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
