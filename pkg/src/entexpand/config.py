"""Run configuration: a flat key=value file with dotted section prefixes.

Example::

    corpus = work/corpus.txt
    seed = 7
    plan.n_models = 5
    contrastive.beta = 1.0
    expansion.target_size = 100

Unknown keys are rejected; every key can be overridden on the command
line; the resolved configuration is echoed into the workdir.
"""

from dataclasses import dataclass, field

from .expansion import ExpansionConfig
from .training import ContrastiveConfig, PhasePlan, SmoothingConfig

ABLATIONS = ("none", "no-cl", "no-ensemble", "no-cl-no-ensemble")


def _parse_alpha(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _parse_ks(text: str):
    ks = tuple(int(p) for p in text.replace(",", " ").split())
    if not ks or any(k < 1 for k in ks):
        raise ValueError("eval.ks needs positive integers")
    return ks


@dataclass
class RunConfig:
    corpus: str = ""
    vocab: str = ""
    seeds: str = ""
    truth: str = ""
    workdir: str = "work"
    seed: int = 0
    jobs: int = 1
    ablation: str = "none"
    eval_ks: tuple = (10, 20, 50)
    h: int = 64
    d: int = 32
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    plan: PhasePlan = field(default_factory=PhasePlan)
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


# key -> (target, attribute, parse)  ('' targets RunConfig itself)
CONFIG_KEYS = {
    "corpus": ("", "corpus", str),
    "vocab": ("", "vocab", str),
    "seeds": ("", "seeds", str),
    "truth": ("", "truth", str),
    "workdir": ("", "workdir", str),
    "seed": ("", "seed", int),
    "jobs": ("", "jobs", int),
    "ablation": ("", "ablation", str),
    "eval.ks": ("", "eval_ks", _parse_ks),
    "model.h": ("", "h", int),
    "model.d": ("", "d", int),
    "smoothing.eta": ("smoothing", "eta", float),
    "contrastive.tau_plus": ("contrastive", "tau_plus", float),
    "contrastive.beta": ("contrastive", "beta", float),
    "contrastive.t": ("contrastive", "t", float),
    "contrastive.thr_pos": ("contrastive", "thr_pos", int),
    "contrastive.l_neg": ("contrastive", "l_neg", int),
    "contrastive.u_neg": ("contrastive", "u_neg", int),
    "plan.n_models": ("plan", "n_models", int),
    "plan.top_k": ("plan", "top_k", int),
    "plan.epochs_phase1": ("plan", "epochs_phase1", int),
    "plan.epochs_phase3": ("plan", "epochs_phase3", int),
    "plan.cl_rounds": ("plan", "cl_rounds", int),
    "plan.lr_pred": ("plan", "lr_pred", float),
    "plan.lr_cl": ("plan", "lr_cl", float),
    "plan.batch_size": ("plan", "batch_size", int),
    "plan.cl_pairs": ("plan", "cl_pairs", int),
    "plan.pos_fraction": ("plan", "pos_fraction", float),
    "expansion.w0": ("expansion", "w0", int),
    "expansion.growth": ("expansion", "growth", int),
    "expansion.step": ("expansion", "step", int),
    "expansion.alpha": ("expansion", "alpha", _parse_alpha),
    "expansion.tau_stage": ("expansion", "tau_stage", int),
    "expansion.target_size": ("expansion", "target_size", int),
    "expansion.anchor_sharpness": ("expansion", "anchor_sharpness", float),
}


def parse_config_text(text: str, path: str = "<config>") -> dict:
    """Parse key = value lines; '#' starts a comment; keys must be known."""
    mapping = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
        mapping[key] = value
    return mapping


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path=str(path))


def apply_overrides(mapping: dict, overrides) -> dict:
    """Merge 'key=value' override strings (later wins) into a mapping."""
    merged = dict(mapping)
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override must look like key=value: {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value
    return merged


def resolve_config(mapping: dict) -> RunConfig:
    """Build a validated RunConfig from string values."""
    cfg = RunConfig()
    sections = {
        "smoothing": {},
        "contrastive": {},
        "plan": {},
        "expansion": {},
        "": {},
    }
    for key, raw in mapping.items():
        target, attr, parse = CONFIG_KEYS[key]
        try:
            sections[target][attr] = parse(raw)
        except ValueError as exc:
            raise ValueError(f"config key {key}: {exc}") from None
    cfg = RunConfig(
        **sections[""],
        smoothing=SmoothingConfig(**sections["smoothing"]),
        contrastive=ContrastiveConfig(**sections["contrastive"]),
        plan=PhasePlan(**sections["plan"]),
        expansion=ExpansionConfig(**sections["expansion"]),
    )
    return cfg


def config_text(cfg: RunConfig) -> str:
    """Echo a RunConfig as a sorted, re-parseable key = value listing."""
    values = {
        "corpus": cfg.corpus,
        "vocab": cfg.vocab,
        "seeds": cfg.seeds,
        "truth": cfg.truth,
        "workdir": cfg.workdir,
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "ablation": cfg.ablation,
        "eval.ks": ",".join(str(k) for k in cfg.eval_ks),
        "model.h": cfg.h,
        "model.d": cfg.d,
        "smoothing.eta": cfg.smoothing.eta,
        "contrastive.tau_plus": cfg.contrastive.tau_plus,
        "contrastive.beta": cfg.contrastive.beta,
        "contrastive.t": cfg.contrastive.t,
        "contrastive.thr_pos": cfg.contrastive.thr_pos,
        "contrastive.l_neg": cfg.contrastive.l_neg,
        "contrastive.u_neg": cfg.contrastive.u_neg,
        "plan.n_models": cfg.plan.n_models,
        "plan.top_k": cfg.plan.top_k,
        "plan.epochs_phase1": cfg.plan.epochs_phase1,
        "plan.epochs_phase3": cfg.plan.epochs_phase3,
        "plan.cl_rounds": cfg.plan.cl_rounds,
        "plan.lr_pred": cfg.plan.lr_pred,
        "plan.lr_cl": cfg.plan.lr_cl,
        "plan.batch_size": cfg.plan.batch_size,
        "plan.cl_pairs": cfg.plan.cl_pairs,
        "plan.pos_fraction": cfg.plan.pos_fraction,
        "expansion.w0": cfg.expansion.w0,
        "expansion.growth": cfg.expansion.growth,
        "expansion.step": cfg.expansion.step,
        "expansion.alpha": "none" if cfg.expansion.alpha is None else cfg.expansion.alpha,
        "expansion.tau_stage": cfg.expansion.tau_stage,
        "expansion.target_size": cfg.expansion.target_size,
        "expansion.anchor_sharpness": cfg.expansion.anchor_sharpness,
    }
    return "".join(f"{key} = {values[key]}\n" for key in sorted(values))
