"""Corpus-based entity set expansion.

Pipeline: generate or load a corpus with tagged entity mentions, train
masked entity prediction models, keep the models that agree most on the
seed entities, then grow each seed class by probabilistic window search
over cached entity distributions, with a final stability re-ranking.
"""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
