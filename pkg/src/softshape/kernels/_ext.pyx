# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-neighbour and farthest-point kernels.

Arithmetic order matches ``_fallback`` term by term so both backends return
bit-identical results.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest_sqdist(const double[:, ::1] a, const double[:, ::1] b):
    """Squared distance and index of the nearest row of ``b`` for every row of ``a``."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j, best_j
    cdef double dx, dy, dz, d, best
    out_d = np.empty(n, dtype=np.float64)
    out_i = np.empty(n, dtype=np.int64)
    cdef double[::1] od = out_d
    cdef cnp.int64_t[::1] oi = out_i
    with nogil:
        for i in range(n):
            best = 1.0e308
            best_j = 0
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
                    best_j = j
            od[i] = best
            oi[i] = best_j
    return out_d, out_i


def farthest_point_indices(const double[:, ::1] pts, Py_ssize_t n_samples, Py_ssize_t start):
    """Greedy farthest-point selection; ties resolve to the smallest index."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t s, i, cur, best_i
    cdef double dx, dy, dz, d, best
    mind = np.empty(n, dtype=np.float64)
    out = np.empty(n_samples, dtype=np.int64)
    cdef double[::1] md = mind
    cdef cnp.int64_t[::1] o = out
    if n_samples == 0:
        return out
    with nogil:
        cur = start
        o[0] = cur
        for i in range(n):
            dx = pts[i, 0] - pts[cur, 0]
            dy = pts[i, 1] - pts[cur, 1]
            dz = pts[i, 2] - pts[cur, 2]
            md[i] = dx * dx + dy * dy + dz * dz
        for s in range(1, n_samples):
            best = -1.0
            best_i = 0
            for i in range(n):
                if md[i] > best:
                    best = md[i]
                    best_i = i
            cur = best_i
            o[s] = cur
            for i in range(n):
                dx = pts[i, 0] - pts[cur, 0]
                dy = pts[i, 1] - pts[cur, 1]
                dz = pts[i, 2] - pts[cur, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < md[i]:
                    md[i] = d
    return out
