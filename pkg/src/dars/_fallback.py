"""Pure-Python implementations of the dynamic-programming kernels.

Used when the compiled extension is unavailable or ``DARS_PURE_PYTHON=1``.
Tie-breaking matches ``_kernels.pyx`` exactly.
"""
import numpy as np


def mas_path(log_lik):
    log_lik = np.asarray(log_lik, dtype=np.float64)
    n, t_len = log_lik.shape
    q = np.full((n, t_len), -np.inf)
    q[0, 0] = log_lik[0, 0]
    for t in range(1, t_len):
        lo = max(0, n - t_len + t)
        hi = min(t, n - 1)
        for i in range(lo, hi + 1):
            stay = q[i, t - 1]
            move = q[i - 1, t - 1] if i > 0 else -np.inf
            q[i, t] = log_lik[i, t] + (move if move > stay else stay)

    path = np.empty(t_len, dtype=np.int64)
    i = n - 1
    path[-1] = i
    for t in range(t_len - 1, 0, -1):
        if i > 0 and q[i - 1, t - 1] > q[i, t - 1]:
            i -= 1
        path[t - 1] = i
    return path, float(q[n - 1, t_len - 1])


def dtw_path(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    out = []
    i, j = n, m
    while True:
        out.append((i - 1, j - 1))
        if i == 1 and j == 1:
            break
        if i == 1:
            j -= 1
        elif j == 1:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if up < diag and up <= left:
                i -= 1
            elif left < diag and left < up:
                j -= 1
            else:
                i -= 1
                j -= 1
    return np.array(out[::-1], dtype=np.int64).reshape(-1, 2), float(acc[n, m])


def edit_distance(ref, hyp):
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]
