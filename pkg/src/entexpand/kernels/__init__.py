"""Numerical kernel backend selection.

Two interchangeable backends exist: a compiled Cython extension
(``entexpand.kernels._core``) and a pure-numpy fallback
(``entexpand.kernels._backend_numpy``).  By default the compiled one is
used when importable.  Set the environment variable ``ENTEXPAND_KERNELS``
to ``python`` or ``compiled`` to force a choice; ``compiled`` raises if
the extension is missing, and ``auto`` (or unset) picks the best available.
"""

import os

from . import _backend_numpy

_choice = os.environ.get("ENTEXPAND_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "python", "compiled", ""):
    raise ImportError(
        f"ENTEXPAND_KERNELS must be 'auto', 'python', or 'compiled', got {_choice!r}"
    )

if _choice == "python":
    _impl = _backend_numpy
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "ENTEXPAND_KERNELS=compiled but the extension "
                "entexpand.kernels._core is not built"
            ) from None
        _impl = _backend_numpy
        BACKEND = "python"

SQRT_2_OVER_PI = _backend_numpy.SQRT_2_OVER_PI
GELU_CUBIC = _backend_numpy.GELU_CUBIC
LOG_FLOOR = _backend_numpy.LOG_FLOOR

gelu = _backend_numpy.gelu
gelu_prime = _backend_numpy.gelu_prime
softmax_rows = _backend_numpy.softmax_rows

hidden_vectors = _impl.hidden_vectors
predict_probs = _impl.predict_probs
prediction_loss_grad = _impl.prediction_loss_grad
project_vectors = _impl.project_vectors
contrastive_loss_grad = _impl.contrastive_loss_grad
kl_divergence = _impl.kl_divergence
kl_divergence_rows = _impl.kl_divergence_rows
window_scores = _impl.window_scores


def backend_module(name):
    """Return a backend module by name ('python' or 'compiled')."""
    if name == "python":
        return _backend_numpy
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
