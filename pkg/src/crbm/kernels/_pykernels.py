"""Pure-numpy reference kernels.

Every reduction runs in a fixed sequential order and never fuses a multiply
with an add, so results are bit-identical to the compiled backend.
"""

import numpy as np


def outer_accumulate(coef, a, b):
    """``out[e, i, j] = sum_q coef[e, q] * (a[e, q, i] * b[e, q, j])``."""
    out = np.zeros((a.shape[0], a.shape[2], b.shape[2]))
    for q in range(a.shape[1]):
        out += coef[:, q, None, None] * (a[:, q, :, None] * b[:, q, None, :])
    return out


def weighted_accumulate(coef, a):
    """``out[e, i] = sum_q coef[e, q] * a[e, q, i]``."""
    out = np.zeros((a.shape[0], a.shape[2]))
    for q in range(a.shape[1]):
        out += coef[:, q, None] * a[:, q, :]
    return out


def row_dot(a, u):
    """``out[e, q] = sum_i a[e, q, i] * u[e, i]``."""
    out = np.zeros(a.shape[:2])
    for i in range(a.shape[2]):
        out += a[:, :, i] * u[:, None, i]
    return out


def scatter_add(target, index, values):
    """In-order ``target[index[k]] += values[k]``."""
    np.add.at(target, index, values)


def rank1_update_maxabs(r, col, row, chunk=4096):
    """In place ``r -= outer(col, row)``; returns the row-wise max of ``|r|``."""
    out = np.empty(r.shape[0])
    for start in range(0, r.shape[0], chunk):
        block = r[start:start + chunk]
        block -= col[start:start + chunk, None] * row[None, :]
        out[start:start + chunk] = np.abs(block).max(axis=1) if block.shape[1] else 0.0
    return out
