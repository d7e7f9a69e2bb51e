# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: dense assignment and pairwise distance sums.

Each function mirrors one in ``_fallback.py`` step for step, so both
backends return the same assignment on the same input.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def lap_solve(const double[:, ::1] cost):
    """Row-to-column optimal assignment of a square cost matrix.

    Shortest augmenting paths with dual potentials, O(n^3).
    """
    cdef Py_ssize_t n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("lap_solve needs a square matrix")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] p = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] row_to_col = out
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return out


def pairwise_distance_sum(const double[:, ::1] a, const double[:, ::1] b):
    """Sum of Euclidean distances over all (row of a, row of b) pairs."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError("point dimensions differ")
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, row, acc, diff
    for i in range(n):
        row = 0.0
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            row += sqrt(acc)
        total += row
    return total
