# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic-programming kernels.

Every function here has a pure-Python twin in ``dars._fallback`` with the
same signature and tie-breaking; ``dars.kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp

from libc.math cimport INFINITY

cnp.import_array()


def mas_path(double[:, ::1] log_lik):
    """Return the best monotone surjective assignment (length T) and its score."""
    cdef Py_ssize_t n = log_lik.shape[0]
    cdef Py_ssize_t t_len = log_lik.shape[1]
    cdef Py_ssize_t i, t, lo, hi
    cdef double stay, move
    q_arr = np.full((n, t_len), -INFINITY, dtype=np.float64)
    cdef double[:, ::1] q = q_arr
    path_arr = np.empty(t_len, dtype=np.int64)
    cdef long long[::1] path = path_arr

    q[0, 0] = log_lik[0, 0]
    for t in range(1, t_len):
        lo = n - (t_len - t)
        if lo < 0:
            lo = 0
        hi = t if t < n - 1 else n - 1
        for i in range(lo, hi + 1):
            stay = q[i, t - 1]
            move = q[i - 1, t - 1] if i > 0 else -INFINITY
            q[i, t] = log_lik[i, t] + (move if move > stay else stay)

    i = n - 1
    path[t_len - 1] = i
    for t in range(t_len - 1, 0, -1):
        if i > 0 and q[i - 1, t - 1] > q[i, t - 1]:
            i -= 1
        path[t - 1] = i
    return path_arr, q[n - 1, t_len - 1]


def dtw_path(double[:, ::1] cost):
    """Minimum-cost warping path over a local cost matrix.

    Steps are (1,1), (1,0), (0,1); on ties the diagonal wins, then the
    reference-axis step. Returns (path as (L, 2) int64 array, total cost).
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double best, c
    acc_arr = np.full((n + 1, m + 1), INFINITY, dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = acc[i - 1, j - 1]
            c = acc[i - 1, j]
            if c < best:
                best = c
            c = acc[i, j - 1]
            if c < best:
                best = c
            acc[i, j] = cost[i - 1, j - 1] + best

    out_arr = np.empty((n + m, 2), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    i = n
    j = m
    k = 0
    while True:
        out[k, 0] = i - 1
        out[k, 1] = j - 1
        k += 1
        if i == 1 and j == 1:
            break
        if i == 1:
            j -= 1
        elif j == 1:
            i -= 1
        else:
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best and acc[i - 1, j] <= acc[i, j - 1]:
                i -= 1
            elif acc[i, j - 1] < best and acc[i, j - 1] < acc[i - 1, j]:
                j -= 1
            else:
                i -= 1
                j -= 1
    return out_arr[:k][::-1].copy(), acc[n, m]


def edit_distance(long long[::1] ref, long long[::1] hyp):
    """Levenshtein distance with unit substitution/deletion/insertion costs."""
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j
    cdef long long a, b, c
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.empty(m + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            a = prev[j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            b = prev[j] + 1
            c = cur[j - 1] + 1
            if b < a:
                a = b
            if c < a:
                a = c
            cur[j] = a
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
