"""Kernel backend selection.

The compiled extension is used when it imports; ``DSRSD_PURE_PYTHON=1`` forces
the numpy fallback.  Both backends expose the same five functions.
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

_NAMES = ("gelu", "gelu_grad", "softmax_rows", "log_softmax_rows", "positive_rank_sum")


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = None if os.environ.get("DSRSD_PURE_PYTHON") else _load_compiled()

if _compiled is not None:
    BACKEND = "cython"
    _active = _compiled
else:
    BACKEND = "python"
    _active = _kernels_py
    log.debug("compiled kernels unavailable, using numpy fallback")


def available_backends():
    names = ["python"]
    if _load_compiled() is not None:
        names.append("cython")
    return names


def get_backend(name):
    """Return the module implementing backend ``name`` ('python' or 'cython')."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        mod = _load_compiled()
        if mod is None:
            raise ImportError("compiled kernels are not built")
        return mod
    raise ValueError(f"unknown kernel backend {name!r}")


gelu = _active.gelu
gelu_grad = _active.gelu_grad
softmax_rows = _active.softmax_rows
log_softmax_rows = _active.log_softmax_rows
positive_rank_sum = _active.positive_rank_sum


def use_backend(name):
    """Rebind the module-level kernels; callers that look them up at call time follow."""
    global BACKEND
    mod = get_backend(name)
    g = globals()
    for n in _NAMES:
        g[n] = getattr(mod, n)
    BACKEND = name


__all__ = ["BACKEND", "available_backends", "get_backend", "use_backend", *_NAMES]
