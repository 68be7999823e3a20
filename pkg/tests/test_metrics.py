import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dars.corpus import MelSpectrogram, UtteranceRecord
from dars.metrics import McdConfig, build_report, energy_distance, mcd, mel_cepstra, normalize_text, wer
from scipy.fft import idct

MCD_UNIT = 10 / math.log(10) * math.sqrt(2)


def mel_from_cepstra(c):
    """Invert the orthonormal DCT so chosen cepstra are hit exactly."""
    return idct(c, type=2, norm="ortho", axis=1)


def all_sequences(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def edit_graph_distances(seqs):
    """All-pairs shortest single-edit paths by breadth-first layers over the sequence graph."""
    index = {s: i for i, s in enumerate(seqs)}
    n = len(seqs)
    adj = np.zeros((n, n), dtype=np.float32)
    alphabet = sorted({w for s in seqs for w in s})
    for s, i in index.items():
        for k in range(len(s) + 1):
            for w in alphabet:
                j = index.get(s[:k] + (w,) + s[k:])
                if j is not None:
                    adj[i, j] = adj[j, i] = 1
        for k in range(len(s)):
            for w in alphabet:
                j = index[s[:k] + (w,) + s[k + 1 :]]
                if j != i:
                    adj[i, j] = 1
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    frontier = np.eye(n, dtype=np.float32)
    reached = frontier > 0
    step = 0
    while not reached.all():
        step += 1
        frontier = ((frontier @ adj) > 0) & ~reached
        dist[frontier] = step
        reached |= frontier
        frontier = frontier.astype(np.float32)
    return dist


# ---------------------------------------------------------------- MCD


def test_identical_is_zero(rng):
    m = rng.normal(size=(20, 80))
    assert mcd(m, m) == 0.0
    assert mcd(MelSpectrogram(m), MelSpectrogram(m.copy())) == 0.0


def test_single_coefficient_unit_difference(rng):
    c = rng.normal(size=(1, 80))
    c2 = c.copy()
    c2[0, 5] += 1.0
    got = mcd(mel_from_cepstra(c), mel_from_cepstra(c2))
    assert abs(got - MCD_UNIT) < 1e-6
    assert MCD_UNIT == pytest.approx(6.14185, abs=1e-5)


def test_c0_excluded(rng):
    c = rng.normal(size=(3, 80))
    c2 = c.copy()
    c2[:, 0] += 4.0
    c2[:, 20] -= 2.0  # beyond coefficient 13
    assert mcd(mel_from_cepstra(c), mel_from_cepstra(c2)) == pytest.approx(0.0, abs=1e-9)


def test_dtw_duplicated_frames(rng):
    m = rng.normal(size=(9, 80))
    assert mcd(np.repeat(m, 2, axis=0), m) == 0.0
    assert mcd(m, np.repeat(m, 2, axis=0)) == 0.0


def test_truncation_mode(rng):
    m = rng.normal(size=(6, 80))
    assert mcd(m, np.repeat(m, 2, axis=0), McdConfig(use_dtw=False)) > 0


def test_symmetry_and_non_negativity(rng):
    for _ in range(20):
        a, b = rng.normal(size=(7, 16)), rng.normal(size=(7, 16))
        assert mcd(a, b) >= 0
        assert mcd(a, b) == pytest.approx(mcd(b, a), rel=1e-12)


def test_mcd_errors():
    with pytest.raises(ValueError):
        mcd(np.zeros((0, 80)), np.zeros((3, 80)))
    with pytest.raises(ValueError):
        mcd(np.zeros((2, 80)), np.zeros((2, 40)))


def test_cepstra_shape(rng):
    assert mel_cepstra(rng.normal(size=(4, 80))).shape == (4, 13)


# ---------------------------------------------------------------- WER


def test_wer_examples():
    assert wer("the cat sat", "the cat sat") == 0.0
    assert wer("the cat sat", "the cat") == pytest.approx(1 / 3)
    assert wer("a b", "a x b") == pytest.approx(0.5)
    assert wer(["a"], ["b", "c", "d"]) == 3.0


def test_wer_normalisation():
    assert normalize_text("Hello,  World!") == ["hello", "world"]
    assert wer("The cat, sat.", "the CAT sat") == 0.0


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        wer("", "a")
    with pytest.raises(ValueError):
        wer([], [])


def test_wer_against_edit_graph_small():
    seqs = list(all_sequences(("a", "b"), 4))
    dist = edit_graph_distances(seqs)
    for i, r in enumerate(seqs):
        if r:
            for j, h in enumerate(seqs):
                assert wer(list(r), list(h)) == dist[i, j] / len(r)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), st.lists(st.sampled_from("abcd"), max_size=6))
def test_wer_non_negative_and_bounded(r, h):
    value = wer(r, h)
    assert 0 <= value <= max(len(r), len(h)) / len(r)
    assert (value == 0) == (r == h)


# ---------------------------------------------------------------- reports


def recs(rows):
    return [UtteranceRecord(u, s, v, (1,), "m", "a", "valid") for u, s, v in rows]


def test_report_overall_is_mean_of_speaker_means():
    r = recs([("u1", "F01", "Severe"), ("u2", "F01", "Severe"), ("u3", "M05", "ModSev")])
    rep = build_report({"u1": 0.1, "u2": 0.3, "u3": 0.4}, r, "WER")
    assert rep.per_speaker == pytest.approx({"F01": 0.2, "M05": 0.4})
    assert rep.overall == pytest.approx(0.3)
    assert rep.per_group == pytest.approx({"Severe": 0.2, "ModSev": 0.4})


def test_report_equal_values():
    r = recs([("u1", "F01", "Severe"), ("u2", "M03", "Mild")])
    assert build_report({"u1": 5.0, "u2": 5.0}, r).overall == 5.0


def test_report_columns_and_files(tmp_path):
    from dars.corpus import TORGO_SPEAKERS

    rows = [(f"u{i}", spk, sev) for i, (spk, (sev, _)) in enumerate(TORGO_SPEAKERS.items())]
    rep = build_report({u: 1.0 + i for i, (u, _, _) in enumerate(rows)}, recs(rows), "MCD")
    assert [name for name, _ in rep.columns()] == ["Severe", "Mod.-Sev.", "Moderate", "Mild", "Overall"]
    rendered = rep.render().splitlines()
    assert rendered[0] == "MCD" and rendered[1].split() == ["Severe", "Mod.-Sev.", "Moderate", "Mild", "Overall"]
    rep.write(tmp_path / "r.txt")
    text = (tmp_path / "r.txt").read_text()
    assert "overall = " in text and "group.Severe = " in text and "Mod.-Sev." in text


def test_report_unknown_utterance():
    with pytest.raises(KeyError):
        build_report({"zz": 1.0}, recs([("u1", "F01", "Severe")]))


def test_energy_distance(rng):
    x = rng.normal(size=(200, 2))
    assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    assert energy_distance(x, x + 3.0) > 1.0
