"""Command-line interface.

Subcommands: synth, train, select, expand, rerank, eval, pipeline, and
cache inspect.  Configuration comes from an optional key=value file plus
--set overrides and direct flags; the ENTEXPAND_WORKDIR environment
variable overrides the default workdir when no flag sets one.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import kernels
from ._seeds import spawn_seed
from .config import (
    ABLATIONS,
    CONFIG_KEYS,
    apply_overrides,
    load_config,
    resolve_config,
)
from .corpus import (
    CorpusFormatError,
    EntityVocab,
    load_corpus,
    load_seed_queries,
    load_truth,
)
from .ensemble import PredictionCache, cache_from_representations, select_top_k
from .expansion import (
    ExpansionState,
    expand,
    load_expansion_results,
    rerank,
    save_expansion_results,
)
from .metrics import evaluate
from .model import (
    ModelDims,
    all_entity_representations,
    checkpoint_checksum,
    init_params,
    save_checkpoint,
)
from .pipeline import (
    PipelineError,
    build_report,
    load_models,
    run_pipeline,
)
from .synthgen import SynthSpec, generate
from .training import train_phase1, train_phase3

WORKDIR_ENV = "ENTEXPAND_WORKDIR"


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--vocab", help="entity vocabulary file")
    p.add_argument("--seeds", help="seed query file")
    p.add_argument("--truth", help="ground-truth file")
    p.add_argument("--workdir", help="artifact directory")
    p.add_argument("--seed", type=int, help="master rng seed")
    p.add_argument("--jobs", type=int, help="parallel training jobs")


def build_runconfig(args, extra=()):
    mapping = load_config(args.config) if getattr(args, "config", None) else {}
    if os.environ.get(WORKDIR_ENV):
        mapping["workdir"] = os.environ[WORKDIR_ENV]
    mapping = apply_overrides(mapping, getattr(args, "set", None))
    direct = {
        "corpus": getattr(args, "corpus", None),
        "vocab": getattr(args, "vocab", None),
        "seeds": getattr(args, "seeds", None),
        "truth": getattr(args, "truth", None),
        "workdir": getattr(args, "workdir", None),
        "seed": getattr(args, "seed", None),
        "jobs": getattr(args, "jobs", None),
        "ablation": getattr(args, "ablation", None),
    }
    for key, extra_key in extra:
        direct[extra_key] = getattr(args, key, None)
    for key, value in direct.items():
        if value is not None:
            mapping[key] = str(value)
    return resolve_config(mapping)


def _require_files(cfg, names):
    for name in names:
        path = getattr(cfg, name)
        if not path:
            raise ValueError(f"missing required path: {name}")
        if not os.path.exists(path):
            raise FileNotFoundError(f"{name} file not found: {path}")


def cmd_synth(args):
    spec = SynthSpec(
        n_parents=args.parents,
        siblings_per_parent=args.siblings,
        entities_per_class=args.entities,
        sentences_per_entity=args.sentences,
        shared_context_ratio=args.rho,
        context_templates_per_class=args.templates,
        rng_seed=args.seed,
    )
    out_dir = args.out or os.environ.get(WORKDIR_ENV) or "work"
    files = generate(spec, out_dir)
    for kind in ("corpus", "vocab", "seeds", "truth"):
        print(f"{kind}: {files[kind]}")
    return 0


def cmd_train(args):
    cfg = build_runconfig(args)
    _require_files(cfg, ["corpus", "vocab"])
    corpus, entity_vocab, token_vocab = load_corpus(cfg.corpus, cfg.vocab)
    dims = ModelDims(v_t=len(token_vocab), v_e=len(entity_vocab), h=cfg.h, d=cfg.d)
    phase_dir = os.path.join(cfg.workdir, "models", f"phase{args.phase}")
    os.makedirs(phase_dir, exist_ok=True)
    if args.phase == 3:
        _require_files(cfg, ["seeds"])
        if not args.results or not os.path.exists(args.results):
            raise FileNotFoundError("phase 3 needs --results from a prior expansion")
        queries = load_seed_queries(cfg.seeds)
        class_seed_ids = {q.class_name: entity_vocab.ids(q.seeds) for q in queries}
        prior = load_expansion_results(args.results)
        ranked_ids = {
            name: [entity_vocab.index_of[rec["surface"]] for rec in records]
            for name, (seeds, records) in prior.items()
        }
    for n in range(cfg.plan.n_models):
        if args.phase == 1:
            params = train_phase1(
                corpus,
                dims,
                cfg.plan,
                spawn_seed(cfg.seed, "phase1", n),
                smoothing=cfg.smoothing,
                model_id=n,
            )
            lineage = f"seed={cfg.seed} phase=1 model={n}"
            ckpt_seed = spawn_seed(cfg.seed, "phase1", n)
        else:
            params = train_phase3(
                init_params(dims, spawn_seed(cfg.seed, "phase3-init", 0, n)),
                corpus,
                ranked_ids,
                class_seed_ids,
                cfg.contrastive,
                cfg.plan,
                spawn_seed(cfg.seed, "phase3", 0, n),
                smoothing=cfg.smoothing,
                use_contrastive=not args.no_contrastive,
                model_id=n,
            )
            lineage = f"seed={cfg.seed} phase=3 round=0 model={n}"
            ckpt_seed = spawn_seed(cfg.seed, "phase3", 0, n)
        path = os.path.join(phase_dir, f"model_{n}.ckpt")
        save_checkpoint(path, params, ckpt_seed, lineage=lineage)
        print(f"saved {path}")
    return 0


def cmd_select(args):
    cfg = build_runconfig(args, extra=(("top_k", "plan.top_k"),))
    _require_files(cfg, ["corpus", "vocab", "seeds"])
    corpus, entity_vocab, _ = load_corpus(cfg.corpus, cfg.vocab)
    queries = load_seed_queries(cfg.seeds)
    class_seed_ids = {q.class_name: entity_vocab.ids(q.seeds) for q in queries}
    model_dir = args.models_dir or os.path.join(cfg.workdir, "models", "phase1")
    models = load_models(model_dir)
    k = cfg.plan.top_k
    reps = [all_entity_representations(p, corpus) for p in models]
    top_idx, scores = select_top_k(reps, class_seed_ids, k)
    for i, s in enumerate(scores):
        marker = "*" if i in top_idx else " "
        print(f"{marker} model_{i}: score={s:.6f}")
    out = args.out or os.path.join(cfg.workdir, "cache", "phase2.bin")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    provenance = [
        checkpoint_checksum(os.path.join(model_dir, f"model_{i}.ckpt"))
        for i in top_idx
    ]
    cache_from_representations([reps[i] for i in top_idx], provenance).save(out)
    print(f"cache: {out}")
    return 0


def _expansion_cfg(args, cfg):
    mapping = {}
    pairs = (
        ("target_size", "expansion.target_size"),
        ("w0", "expansion.w0"),
        ("growth", "expansion.growth"),
        ("step", "expansion.step"),
        ("alpha", "expansion.alpha"),
        ("tau_stage", "expansion.tau_stage"),
        ("sharpness", "expansion.anchor_sharpness"),
    )
    for attr, key in pairs:
        value = getattr(args, attr, None)
        if value is not None:
            mapping[key] = str(value)
    if not mapping:
        return cfg.expansion
    updates = {CONFIG_KEYS[k][1]: CONFIG_KEYS[k][2](v) for k, v in mapping.items()}
    return replace(cfg.expansion, **updates)


def _add_expansion_flags(p):
    p.add_argument("--cache", help="prediction cache file")
    p.add_argument("--target-size", dest="target_size", type=int)
    p.add_argument("--w0", type=int)
    p.add_argument("--growth", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau-stage", dest="tau_stage", type=int)
    p.add_argument("--sharpness", type=float)


def cmd_expand(args):
    cfg = build_runconfig(args)
    _require_files(cfg, ["vocab", "seeds"])
    cache_path = args.cache or os.path.join(cfg.workdir, "cache", "phase2.bin")
    cache = PredictionCache.load(cache_path)
    entity_vocab = EntityVocab.load(cfg.vocab)
    queries = load_seed_queries(cfg.seeds)
    exp_cfg = _expansion_cfg(args, cfg)
    results = {}
    for q in queries:
        seed_ids = entity_vocab.ids(q.seeds)
        state = expand(seed_ids, cache, exp_cfg)
        records = [
            {"surface": entity_vocab.surface(e), "order": state.expanded_order[e]}
            for e in state.expanded
        ]
        results[q.class_name] = (q.seeds, records)
    out = args.out or os.path.join(cfg.workdir, "expansion", "expanded.txt")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    save_expansion_results(out, results)
    print(f"expansion: {out}")
    return 0


def cmd_rerank(args):
    cfg = build_runconfig(args)
    _require_files(cfg, ["vocab"])
    cache_path = args.cache or os.path.join(cfg.workdir, "cache", "phase2.bin")
    cache = PredictionCache.load(cache_path)
    entity_vocab = EntityVocab.load(cfg.vocab)
    prior = load_expansion_results(args.results)
    exp_cfg = _expansion_cfg(args, cfg)
    results = {}
    for name, (seeds, records) in sorted(prior.items()):
        ordered = sorted(records, key=lambda r: r["order"])
        expanded_ids = [entity_vocab.index_of[r["surface"]] for r in ordered]
        seed_ids = entity_vocab.ids(seeds)
        state = ExpansionState(
            current=seed_ids + expanded_ids,
            n_seeds=len(seed_ids),
            expanded_order={e: i + 1 for i, e in enumerate(expanded_ids)},
        )
        reranked = rerank(state, cache, exp_cfg)
        results[name] = (
            seeds,
            [
                {
                    "surface": entity_vocab.surface(r.entity_id),
                    "order": r.order,
                    "rank": r.rank,
                    "score": round(r.score, 12),
                }
                for r in reranked
            ],
        )
    out = args.out or os.path.join(cfg.workdir, "expansion", "final.txt")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    save_expansion_results(out, results)
    print(f"reranked: {out}")
    return 0


def cmd_eval(args):
    ks = tuple(int(k) for k in args.ks.replace(",", " ").split())
    results = load_expansion_results(args.results)
    if not results:
        raise ValueError(f"no records in results file: {args.results}")
    truth = load_truth(args.truth)
    if args.vocab:
        vocab = EntityVocab.load(args.vocab)
        for name, (seeds, records) in results.items():
            for rec in records:
                if rec["surface"] not in vocab:
                    raise ValueError(
                        f"unknown entity in results for {name}: {rec['surface']!r}"
                    )
    ranked = {
        name: [rec["surface"] for rec in records]
        for name, (seeds, records) in results.items()
    }
    eval_result = evaluate(ranked, truth, ks)
    sys.stdout.write(build_report(args.label, eval_result, ks))
    return 0


def cmd_pipeline(args):
    cfg = build_runconfig(args)
    _require_files(cfg, ["corpus", "vocab", "seeds"])
    if cfg.truth:
        _require_files(cfg, ["truth"])
    result = run_pipeline(cfg)
    with open(result.report_path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    print(f"report: {result.report_path}")
    return 0


def cmd_cache_inspect(args):
    cache = PredictionCache.load(args.cache)
    print(f"entities: {cache.v_e}")
    print(f"models: {len(cache.provenance)}")
    for digest in cache.provenance:
        print(f"  model sha256 {digest}")
    if args.entity is None:
        return 0
    vocab = None
    if args.vocab:
        vocab = EntityVocab.load(args.vocab)
    if vocab is not None and args.entity in vocab:
        entity_id = vocab.index_of[args.entity]
    else:
        try:
            entity_id = int(args.entity)
        except ValueError:
            raise ValueError(f"unknown entity {args.entity!r}") from None
        if not 0 <= entity_id < cache.v_e:
            raise ValueError(f"entity id out of range: {entity_id}")
    label = vocab.surface(entity_id) if vocab else str(entity_id)
    print(f"top {args.n} predictions for {label}:")
    for e, p in cache.top(entity_id, args.n):
        name = vocab.surface(e) if vocab else str(e)
        print(f"  {name}  {p:.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="entexpand",
        description="Corpus-based entity set expansion from seed entities.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log training progress"
    )
    parser.add_argument(
        "--kernels",
        action="store_true",
        help="print the active kernel backend and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--parents", type=int, required=True)
    p.add_argument("--siblings", type=int, required=True)
    p.add_argument("--entities", type=int, required=True)
    p.add_argument("--sentences", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--templates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: workdir)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train prediction models")
    _add_config_flags(p)
    p.add_argument("--phase", type=int, choices=(1, 3), default=1)
    p.add_argument("--results", help="prior expansion results (phase 3)")
    p.add_argument(
        "--no-contrastive",
        action="store_true",
        help="phase 3 without contrastive batches",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="score models and build the cache")
    _add_config_flags(p)
    p.add_argument("--models-dir", dest="models_dir")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--out", help="cache output path")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("expand", help="expand seed queries from a cache")
    _add_config_flags(p)
    _add_expansion_flags(p)
    p.add_argument("--out", help="expansion output path")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("rerank", help="re-rank prior expansion results")
    _add_config_flags(p)
    _add_expansion_flags(p)
    p.add_argument("--results", required=True, help="expansion results file")
    p.add_argument("--out", help="reranked output path")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score expansion results against truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--vocab", help="check result entities against this vocabulary")
    p.add_argument("--ks", default="10,20,50")
    p.add_argument("--label", default="results")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run all phases end to end")
    _add_config_flags(p)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("cache", help="cache utilities")
    cache_sub = p.add_subparsers(dest="cache_command")
    q = cache_sub.add_parser("inspect", help="dump cache header and entity rows")
    q.add_argument("--cache", required=True)
    q.add_argument("--vocab")
    q.add_argument("--entity", help="entity surface or integer id")
    q.add_argument("-n", type=int, default=10)
    q.set_defaults(func=cmd_cache_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
    )
    if args.kernels:
        print(f"kernel backend: {kernels.BACKEND}")
        return 0
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (
        ValueError,
        OSError,
        CorpusFormatError,
        PipelineError,
        KeyError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
