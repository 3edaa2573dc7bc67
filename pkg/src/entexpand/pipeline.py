"""Four-phase pipeline orchestration.

Phase 1 trains prediction-only models; phase 2 scores them on seed
consistency, keeps the top k, and caches their ensembled entity
distributions; an intermediate expansion turns that cache into per-class
ranked lists; phase 3 retrains fresh models with contrastive batches
built from those lists; phase 4 reselects and rebuilds the cache; a final
expansion is re-ranked and evaluated.  Every stage persists its artifacts
under the workdir so later stages can be rerun from disk.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ._seeds import spawn_seed
from .config import RunConfig, config_text
from .corpus import load_corpus, load_seed_queries, load_truth
from .ensemble import (
    cache_from_representations,
    select_top_k,
)
from .expansion import expand, rerank, save_expansion_results
from .metrics import evaluate, format_report, format_table, report_records
from .model import (
    ModelDims,
    all_entity_representations,
    checkpoint_checksum,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import train_phase1, train_phase3

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and artifact trail."""

    def __init__(self, stage, artifacts, cause):
        self.stage = stage
        self.artifacts = list(artifacts)
        trail = ", ".join(self.artifacts) if self.artifacts else "none"
        super().__init__(f"stage {stage!r} failed (artifacts so far: {trail}): {cause}")


@dataclass
class PipelineResult:
    workdir: str
    method: str
    eval_result: dict
    final_ranked: dict
    report_path: str


def workdir_paths(workdir: str) -> dict:
    return {
        "config": os.path.join(workdir, "config.txt"),
        "models_phase1": os.path.join(workdir, "models", "phase1"),
        "models_phase3": os.path.join(workdir, "models", "phase3"),
        "cache_phase2": os.path.join(workdir, "cache", "phase2.bin"),
        "cache_phase4": os.path.join(workdir, "cache", "phase4.bin"),
        "intermediate": os.path.join(workdir, "expansion", "intermediate.txt"),
        "final": os.path.join(workdir, "expansion", "final.txt"),
        "report": os.path.join(workdir, "report.txt"),
        "report_records": os.path.join(workdir, "report.jsonl"),
    }


def _train_phase1_job(args):
    corpus, dims, plan, smoothing, seed, model_id = args
    return train_phase1(corpus, dims, plan, seed, smoothing=smoothing, model_id=model_id)


def _train_phase3_job(args):
    (
        corpus,
        dims,
        plan,
        smoothing,
        contrastive,
        ranked_ids,
        class_seed_ids,
        use_cl,
        init_seed,
        train_seed,
        model_id,
    ) = args
    params = init_params(dims, init_seed)
    return train_phase3(
        params,
        corpus,
        ranked_ids,
        class_seed_ids,
        contrastive,
        plan,
        train_seed,
        smoothing=smoothing,
        use_contrastive=use_cl,
        model_id=model_id,
    )


def _run_jobs(fn, arg_list, jobs: int):
    if jobs <= 1:
        return [fn(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, arg_list))


def expand_queries(cache, class_seed_ids: dict, exp_cfg, vocab):
    """Expand and re-rank every query; returns per-class results.

    The result maps class name to (seed surfaces, entity records); records
    carry surface, expansion order, re-rank position, and score in final
    ranked order.
    """
    results = {}
    for name in sorted(class_seed_ids):
        seed_ids = class_seed_ids[name]
        state = expand(seed_ids, cache, exp_cfg)
        records = [
            {
                "surface": vocab.surface(r.entity_id),
                "order": r.order,
                "rank": r.rank,
                "score": round(r.score, 12),
            }
            for r in rerank(state, cache, exp_cfg)
        ]
        results[name] = ([vocab.surface(e) for e in seed_ids], records)
    return results


def _ranked_ids(results: dict, vocab) -> dict:
    return {
        name: [vocab.index_of[rec["surface"]] for rec in records]
        for name, (seeds, records) in results.items()
    }


def method_label(ablation: str) -> str:
    return "full" if ablation == "none" else ablation


def build_report(label: str, eval_result: dict, ks) -> str:
    """Deterministic plain-text report: MAP table plus per-class AP table."""
    text = format_report({label: eval_result["map"]}, ks)
    text += "\n"
    text += format_table(
        dict(sorted(eval_result["classes"].items())), ks, row_title="class", metric="AP"
    )
    return text


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Run all phases per the RunConfig; returns the evaluation result."""
    paths = workdir_paths(cfg.workdir)
    artifacts = []
    stage = "setup"
    try:
        for key in ("models_phase1", "models_phase3"):
            os.makedirs(paths[key], exist_ok=True)
        os.makedirs(os.path.join(cfg.workdir, "cache"), exist_ok=True)
        os.makedirs(os.path.join(cfg.workdir, "expansion"), exist_ok=True)
        with open(paths["config"], "w", encoding="utf-8") as fh:
            fh.write(config_text(cfg))
        artifacts.append(paths["config"])

        corpus, entity_vocab, token_vocab = load_corpus(cfg.corpus, cfg.vocab)
        queries = load_seed_queries(cfg.seeds)
        if cfg.truth:
            truth = load_truth(cfg.truth)
        else:
            truth = {q.class_name: q.truth for q in queries if q.truth is not None}
        if not truth:
            raise ValueError("no ground truth: give a truth file or embed it in seeds")
        class_seed_ids = {q.class_name: entity_vocab.ids(q.seeds) for q in queries}
        dims = ModelDims(
            v_t=len(token_vocab), v_e=len(entity_vocab), h=cfg.h, d=cfg.d
        )
        top_k = (
            1 if cfg.ablation in ("no-ensemble", "no-cl-no-ensemble") else cfg.plan.top_k
        )
        use_cl = cfg.ablation not in ("no-cl", "no-cl-no-ensemble")

        stage = "phase1-train"
        jobs = [
            (
                corpus,
                dims,
                cfg.plan,
                cfg.smoothing,
                spawn_seed(cfg.seed, "phase1", n),
                n,
            )
            for n in range(cfg.plan.n_models)
        ]
        models1 = _run_jobs(_train_phase1_job, jobs, cfg.jobs)
        ckpts1 = []
        for n, params in enumerate(models1):
            path = os.path.join(paths["models_phase1"], f"model_{n}.ckpt")
            save_checkpoint(
                path,
                params,
                spawn_seed(cfg.seed, "phase1", n),
                lineage=f"seed={cfg.seed} phase=1 model={n}",
            )
            ckpts1.append(path)
            artifacts.append(path)

        stage = "phase2-select"
        reps1 = [all_entity_representations(p, corpus) for p in models1]
        top_idx, scores = select_top_k(reps1, class_seed_ids, top_k)
        logger.info(
            "phase=2 selected=%s scores=%s",
            top_idx,
            [f"{s:.6f}" for s in scores],
        )
        cache2 = cache_from_representations(
            [reps1[i] for i in top_idx],
            provenance=[checkpoint_checksum(ckpts1[i]) for i in top_idx],
        )
        cache2.save(paths["cache_phase2"])
        artifacts.append(paths["cache_phase2"])

        stage = "intermediate-expansion"
        results = expand_queries(cache2, class_seed_ids, cfg.expansion, entity_vocab)
        save_expansion_results(paths["intermediate"], results)
        artifacts.append(paths["intermediate"])
        ranked_ids = _ranked_ids(results, entity_vocab)

        final_cache = cache2
        for rnd in range(cfg.plan.cl_rounds):
            stage = f"phase3-train-round{rnd}"
            jobs = [
                (
                    corpus,
                    dims,
                    cfg.plan,
                    cfg.smoothing,
                    cfg.contrastive,
                    ranked_ids,
                    class_seed_ids,
                    use_cl,
                    spawn_seed(cfg.seed, "phase3-init", rnd, n),
                    spawn_seed(cfg.seed, "phase3", rnd, n),
                    n,
                )
                for n in range(cfg.plan.n_models)
            ]
            models3 = _run_jobs(_train_phase3_job, jobs, cfg.jobs)
            ckpts3 = []
            for n, params in enumerate(models3):
                path = os.path.join(paths["models_phase3"], f"model_{n}.ckpt")
                save_checkpoint(
                    path,
                    params,
                    spawn_seed(cfg.seed, "phase3", rnd, n),
                    lineage=f"seed={cfg.seed} phase=3 round={rnd} model={n}",
                )
                ckpts3.append(path)
                artifacts.append(path)

            stage = f"phase4-select-round{rnd}"
            reps3 = [all_entity_representations(p, corpus) for p in models3]
            top_idx, scores = select_top_k(reps3, class_seed_ids, top_k)
            logger.info(
                "phase=4 round=%d selected=%s scores=%s",
                rnd,
                top_idx,
                [f"{s:.6f}" for s in scores],
            )
            final_cache = cache_from_representations(
                [reps3[i] for i in top_idx],
                provenance=[checkpoint_checksum(ckpts3[i]) for i in top_idx],
            )
            final_cache.save(paths["cache_phase4"])
            artifacts.append(paths["cache_phase4"])

            stage = f"final-expansion-round{rnd}"
            results = expand_queries(
                final_cache, class_seed_ids, cfg.expansion, entity_vocab
            )
            ranked_ids = _ranked_ids(results, entity_vocab)

        save_expansion_results(paths["final"], results)
        artifacts.append(paths["final"])

        stage = "eval"
        final_ranked = {
            name: [rec["surface"] for rec in records]
            for name, (seeds, records) in results.items()
        }
        eval_result = evaluate(final_ranked, truth, cfg.eval_ks)
        label = method_label(cfg.ablation)
        with open(paths["report"], "w", encoding="utf-8") as fh:
            fh.write(build_report(label, eval_result, cfg.eval_ks))
        with open(paths["report_records"], "w", encoding="utf-8") as fh:
            fh.write(report_records({label: eval_result["map"]}, cfg.eval_ks))
        artifacts.append(paths["report"])
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, artifacts, exc) from exc

    return PipelineResult(
        workdir=cfg.workdir,
        method=label,
        eval_result=eval_result,
        final_ranked=final_ranked,
        report_path=paths["report"],
    )


def load_models(model_dir: str) -> list:
    """Load model_{n}.ckpt files (n = 0, 1, ...) from a directory."""
    models = []
    n = 0
    while True:
        path = os.path.join(model_dir, f"model_{n}.ckpt")
        if not os.path.exists(path):
            break
        params, _, _ = load_checkpoint(path)
        models.append(params)
        n += 1
    if not models:
        raise FileNotFoundError(f"no model checkpoints under {model_dir}")
    return models
