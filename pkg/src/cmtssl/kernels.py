"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions
take over. Set ``CMTSSL_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CMTSSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

AGG_CODES = {"average": 0, "maximum": 1, "std": 2}


def gradient_magnitude(cube, impl=None):
    impl = impl or _impl
    return impl.gradient_magnitude(np.ascontiguousarray(cube, dtype=np.float64))


def batch_scores(cubes, aggregation="average", impl=None):
    impl = impl or _impl
    stack = np.ascontiguousarray(cubes, dtype=np.float64)
    return impl.batch_scores(stack, AGG_CODES[aggregation])


def confusion_counts(truth, pred, ignore_id, num_classes, impl=None):
    impl = impl or _impl
    t = np.ascontiguousarray(truth, dtype=np.int64).ravel()
    p = np.ascontiguousarray(pred, dtype=np.int64).ravel()
    return impl.confusion_counts(t, p, int(ignore_id), int(num_classes))


def implementations():
    """All importable backends, keyed by name (for benchmarks and cross-checks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out
