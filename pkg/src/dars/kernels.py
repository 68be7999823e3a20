"""Backend selection for the dynamic-programming kernels.

The compiled Cython extension is preferred; the pure-Python fallback is used
when it is missing or when the environment variable ``DARS_PURE_PYTHON`` is
set to a non-empty value other than ``0``.
"""
import os

import numpy as np

from . import _fallback

_force_pure = os.environ.get("DARS_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def mas_path(log_lik):
    """Maximum-score monotone alignment; returns (assignment, score)."""
    return _impl.mas_path(np.ascontiguousarray(log_lik, dtype=np.float64))


def dtw_path(cost):
    """Minimum-cost DTW path over a local cost matrix; returns (path, total)."""
    return _impl.dtw_path(np.ascontiguousarray(cost, dtype=np.float64))


def edit_distance(ref, hyp):
    """Levenshtein distance between two integer-coded sequences."""
    if _impl is _fallback:
        return _fallback.edit_distance(list(ref), list(hyp))
    return _impl.edit_distance(
        np.ascontiguousarray(ref, dtype=np.int64), np.ascontiguousarray(hyp, dtype=np.int64)
    )
