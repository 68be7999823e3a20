import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dars import _fallback, kernels

try:
    from dars import _kernels
except ImportError:
    _kernels = None

BACKENDS = [pytest.param(_fallback, id="python")]
BACKENDS.append(pytest.param(_kernels, id="cython", marks=pytest.mark.skipif(_kernels is None, reason="not built")))


def brute_mas(log_lik):
    n, t = log_lik.shape
    best = -np.inf
    # choose the n-1 frames at which the phoneme index advances
    for cuts in itertools.combinations(range(1, t), n - 1):
        a = np.zeros(t, dtype=int)
        for c in cuts:
            a[c:] += 1
        best = max(best, log_lik[a, np.arange(t)].sum())
    return best


def brute_levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        brute_levenshtein(a[1:], b) + 1,
        brute_levenshtein(a, b[1:]) + 1,
        brute_levenshtein(a[1:], b[1:]) + (a[0] != b[0]),
    )


def brute_dtw(cost):
    n, m = cost.shape
    best = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(m):
            prev = 0.0 if i == j == 0 else min(
                best[i - 1, j] if i else np.inf,
                best[i, j - 1] if j else np.inf,
                best[i - 1, j - 1] if i and j else np.inf,
            )
            best[i, j] = cost[i, j] + prev
    return best[-1, -1]


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", BACKENDS)
def test_mas_matches_enumeration(impl, rng):
    for _ in range(100):
        n = int(rng.integers(1, 5))
        t = int(rng.integers(n, 8))
        ll = rng.normal(size=(n, t))
        path, score = impl.mas_path(ll)
        assert score == pytest.approx(brute_mas(ll), abs=1e-12)
        assert ll[path, np.arange(t)].sum() == pytest.approx(score, abs=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_mas_tie_stays_on_current_phoneme(impl):
    # all paths tie; the backtrace keeps the later phoneme as long as possible
    path, _ = impl.mas_path(np.zeros((2, 4)))
    assert path.tolist() == [0, 1, 1, 1]


@pytest.mark.parametrize("impl", BACKENDS)
def test_dtw_matches_brute_force(impl, rng):
    for _ in range(50):
        cost = rng.random(size=(int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        path, total = impl.dtw_path(cost)
        assert total == pytest.approx(brute_dtw(cost), abs=1e-12)
        assert tuple(path[0]) == (0, 0) and tuple(path[-1]) == (cost.shape[0] - 1, cost.shape[1] - 1)
        steps = np.diff(path, axis=0)
        assert np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1)
        assert cost[path[:, 0], path[:, 1]].sum() == pytest.approx(total, abs=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_edit_distance_examples(impl):
    arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    assert impl.edit_distance(arr([1, 2, 3]), arr([1, 2])) == 1
    assert impl.edit_distance(arr([]), arr([4, 5])) == 2
    assert impl.edit_distance(arr([1, 2]), arr([1, 9, 2])) == 1


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=6), st.lists(st.integers(0, 3), max_size=6))
def test_edit_distance_property(a, b):
    expected = brute_levenshtein(a, b)
    assert kernels.edit_distance(a, b) == expected
    assert _fallback.edit_distance(list(a), list(b)) == expected


@pytest.mark.skipif(_kernels is None, reason="extension not built")
@settings(max_examples=80, deadline=None)
@given(st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_backends_agree(n, extra, seed):
    r = np.random.default_rng(seed)
    ll = np.round(r.normal(size=(n, n + extra)), 1)  # rounding creates ties
    p1, s1 = _fallback.mas_path(ll)
    p2, s2 = _kernels.mas_path(ll)
    assert np.array_equal(p1, p2) and s1 == pytest.approx(s2)
    cost = np.round(r.random(size=(n, n + extra)), 1)
    d1, t1 = _fallback.dtw_path(cost)
    d2, t2 = _kernels.dtw_path(cost)
    assert np.array_equal(d1, d2) and t1 == pytest.approx(t2)


def test_environment_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, DARS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import dars.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
