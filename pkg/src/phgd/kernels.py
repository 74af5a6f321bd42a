"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Setting the environment
variable ``PHGD_PURE_PYTHON=1`` forces the fallback.
"""
import os
from contextlib import contextmanager

from . import _pykernels

HIDDEN_IDENTITY, HIDDEN_CELU = 0, 1
HEAD_IDENTITY, HEAD_SIGMOID, HEAD_SOFTMAX, HEAD_LOGIT = 0, 1, 2, 3

_native = None
if not os.environ.get("PHGD_PURE_PYTHON"):
    try:
        from . import _ckernels as _native
    except ImportError:
        _native = None

_NAMES = ("jacobi_columns", "gram_pinv", "gram_pinv_batch", "precondition_batch",
          "mlp_forward_batch", "poibin_tail", "loo_tails", "affine_velocity", "affine_flow")


def _bind(module):
    global BACKEND
    BACKEND = "cython" if module is _native else "python"
    for name in _NAMES:
        globals()[name] = getattr(module, name)


_bind(_native if _native is not None else _pykernels)


def backends():
    """Map backend name to kernel module for every available backend."""
    out = {"python": _pykernels}
    if _native is not None:
        out["cython"] = _native
    return out


@contextmanager
def use_backend(name):
    """Temporarily route every kernel call through backend ``name``."""
    table = backends()
    if name not in table:
        raise ValueError(f"backend {name!r} not available; have {sorted(table)}")
    previous = _native if BACKEND == "cython" else _pykernels
    _bind(table[name])
    try:
        yield table[name]
    finally:
        _bind(previous)
