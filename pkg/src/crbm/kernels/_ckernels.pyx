# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled inner loops; see ``_pykernels`` for the reference semantics."""

import numpy as np
from libc.math cimport fabs
from libc.stdint cimport int64_t


def outer_accumulate(const double[:, ::1] coef, const double[:, :, ::1] a,
                     const double[:, :, ::1] b):
    cdef Py_ssize_t n_el = a.shape[0], n_q = a.shape[1], n_loc = a.shape[2], n_col = b.shape[2]
    cdef Py_ssize_t e, q, i, j
    if b.shape[0] != n_el or b.shape[1] != n_q:
        raise ValueError("a and b must share the element and quadrature axes")
    out = np.zeros((n_el, n_loc, n_col))
    cdef double[:, :, ::1] o = out
    cdef double c
    for e in range(n_el):
        for q in range(n_q):
            c = coef[e, q]
            for i in range(n_loc):
                for j in range(n_col):
                    o[e, i, j] = o[e, i, j] + c * (a[e, q, i] * b[e, q, j])
    return out


def weighted_accumulate(const double[:, ::1] coef, const double[:, :, ::1] a):
    cdef Py_ssize_t n_el = a.shape[0], n_q = a.shape[1], n_loc = a.shape[2]
    cdef Py_ssize_t e, q, i
    out = np.zeros((n_el, n_loc))
    cdef double[:, ::1] o = out
    for e in range(n_el):
        for q in range(n_q):
            for i in range(n_loc):
                o[e, i] = o[e, i] + coef[e, q] * a[e, q, i]
    return out


def row_dot(const double[:, :, ::1] a, const double[:, ::1] u):
    cdef Py_ssize_t n_el = a.shape[0], n_q = a.shape[1], n_loc = a.shape[2]
    cdef Py_ssize_t e, q, i
    out = np.zeros((n_el, n_q))
    cdef double[:, ::1] o = out
    cdef double s
    for e in range(n_el):
        for q in range(n_q):
            s = 0.0
            for i in range(n_loc):
                s = s + a[e, q, i] * u[e, i]
            o[e, q] = s
    return out


def scatter_add(double[::1] target, const int64_t[::1] index, const double[::1] values):
    cdef Py_ssize_t k
    for k in range(index.shape[0]):
        target[index[k]] = target[index[k]] + values[k]


def rank1_update_maxabs(double[:, ::1] r, const double[::1] col, const double[::1] row):
    cdef Py_ssize_t m = r.shape[0], n = r.shape[1], i, j
    out = np.zeros(m)
    cdef double[::1] o = out
    cdef double c, v, best
    for i in range(m):
        c = col[i]
        best = 0.0
        for j in range(n):
            v = r[i, j] - c * row[j]
            r[i, j] = v
            if fabs(v) > best:
                best = fabs(v)
        o[i] = best
    return out
