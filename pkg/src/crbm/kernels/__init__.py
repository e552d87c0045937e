"""Hot loops of the contact assembly and the EIM greedy.

The compiled extension is used when it was built; setting
``CRBM_KERNELS=python`` forces the pure-numpy fallback. Both backends give
bit-identical results.
"""

import os

import numpy as np

from . import _pykernels

_backend = _pykernels
BACKEND = "python"
if os.environ.get("CRBM_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _backend  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _backend = _pykernels


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def outer_accumulate(coef, a, b=None, backend=None):
    k = backend or _backend
    a = _f64(a)
    return k.outer_accumulate(_f64(coef), a, a if b is None else _f64(b))


def weighted_accumulate(coef, a, backend=None):
    return (backend or _backend).weighted_accumulate(_f64(coef), _f64(a))


def row_dot(a, u, backend=None):
    return (backend or _backend).row_dot(_f64(a), _f64(u))


def scatter_add(target, index, values, backend=None):
    if target.dtype != np.float64 or not target.flags.c_contiguous:
        raise TypeError("target must be a contiguous float64 array")
    (backend or _backend).scatter_add(target, np.ascontiguousarray(index, dtype=np.int64), _f64(values))


def rank1_update_maxabs(r, col, row, backend=None):
    if r.dtype != np.float64 or not r.flags.c_contiguous:
        raise TypeError("r must be a contiguous float64 array")
    return (backend or _backend).rank1_update_maxabs(r, _f64(col), _f64(row))


def backends():
    """Available kernel modules keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
