import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dars.cpo import CpoConfig, NormalDurationTable, cpo_loss, cpo_weights, normal_reference
from dars.rhythm import RhythmPredictor, VocabularyError
from gradutil import fd_relative_error
from test_rhythm import GRAD, batch

CFG = CpoConfig(alpha=0.7, beta=0.3, margin=0.75)


def oracle_loss(pred, dys, normal, w, m):
    return sum(wi * max(0.0, abs(p - d) - abs(p - n) + m) for p, d, n, wi in zip(pred, dys, normal, w)) / len(pred)


def t64(xs):
    return torch.tensor(xs, dtype=torch.float64)


def test_weight_examples():
    assert cpo_weights(t64([[0.2, 0.8]]), torch.tensor([1]), CFG).tolist() == pytest.approx([0.56])
    assert cpo_weights(t64([[1.0, 0.0]]), torch.tensor([0]), CFG).tolist() == pytest.approx([0.3])


def test_weights_symmetric_when_alpha_equals_beta():
    cfg = CpoConfig(0.5, 0.5)
    w = cpo_weights(t64([[0.6, 0.4, 0.0], [0.1, 0.3, 0.6]]), torch.tensor([0, 2]), cfg)
    assert w[0].item() == pytest.approx(w[1].item())


def test_weights_bounded(rng):
    probs = torch.softmax(torch.from_numpy(rng.normal(size=(50, 4))), -1)
    labels = torch.from_numpy(rng.integers(0, 4, size=50))
    w = cpo_weights(probs, labels, CFG)
    assert float(w.min()) >= 0 and float(w.max()) <= 0.7


def test_alpha_below_beta_warns():
    with pytest.warns(UserWarning):
        CpoConfig(alpha=0.2, beta=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        CpoConfig()
    with pytest.raises(ValueError):
        CpoConfig(margin=-1.0)


def test_loss_examples():
    assert cpo_loss(t64([2.0]), t64([1.8]), t64([1.0]), t64([0.56]), CFG).item() == 0.0
    assert cpo_loss(t64([1.4]), t64([1.0]), t64([1.5]), t64([0.27]), CFG).item() == pytest.approx(0.2835, rel=1e-12)
    w = t64([0.3, 0.5, 0.1])
    same = t64([1.0, 2.0, 0.5])
    assert cpo_loss(t64([0.0, 9.0, 1.0]), same, same, w, CFG).item() == pytest.approx(0.75 * w.mean().item())


def test_loss_shape_error():
    with pytest.raises(ValueError):
        cpo_loss(t64([1.0, 2.0]), t64([1.0]), t64([1.0]), t64([1.0]), CFG)


def test_loss_matches_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(1, 9))
        p, d, dn = (rng.normal(size=n) for _ in range(3))
        w = rng.random(n)
        m = float(rng.random())
        got = cpo_loss(t64(p), t64(d), t64(dn), t64(w), CpoConfig(1.0, 0.5, m)).item()
        want = oracle_loss(p, d, dn, w, m)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-15)


def test_masked_batch_reduction():
    pred = t64([[1.4, 0.0], [1.4, 5.0]])
    dys = t64([[1.0, 0.0], [1.0, 5.0]])
    normal = t64([[1.5, 0.0], [1.5, 0.0]])
    w = t64([[0.27, 9.0], [0.27, 0.0]])
    mask = torch.tensor([[True, False], [True, True]])
    got = cpo_loss(pred, dys, normal, w, CFG, mask=mask).item()
    assert got == pytest.approx((0.2835 + 0.2835 / 2) / 2)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1)),
                min_size=1, max_size=8))
def test_zero_loss_region(rows):
    m = 0.75
    # move the normal reference so every position satisfies |p-d| + m <= |p-dn|
    pred, dys, normal, w = [], [], [], []
    for p, d, off, wi in rows:
        gap = abs(p - d) + m + abs(off)
        pred.append(p)
        dys.append(d)
        normal.append(p + gap if off >= 0 else p - gap)
        w.append(wi)
    assume(all(abs(p - d) + m <= abs(p - n) for p, d, n in zip(pred, dys, normal)))
    assert cpo_loss(t64(pred), t64(dys), t64(normal), t64(w), CFG).item() == 0.0


def test_monotone_in_true_class_probability():
    labels = torch.tensor([2])
    losses = []
    for p in (0.2, 0.4, 0.6, 0.8):
        probs = t64([[(1 - p) / 2, (1 - p) / 2, p]])
        w = cpo_weights(probs, labels, CFG)
        losses.append(cpo_loss(t64([1.4]), t64([1.0]), t64([1.5]), w, CFG).item())
    assert losses == sorted(losses) and losses[0] > 0


def test_kink_subgradient_is_zero():
    pred = t64([1.0]).requires_grad_()
    # hinge argument exactly 0: |1-1| - |1-1.75| + 0.75
    cpo_loss(pred, t64([1.0]), t64([1.75]), t64([1.0]), CFG).backward()
    assert pred.grad.item() == 0.0


def test_cpo_gradient_through_model():
    torch.manual_seed(3)
    m = RhythmPredictor(GRAD).double()
    torch.nn.init.normal_(m.pause_predictor.out.weight, std=0.3)
    tokens, mask, spk, classes = batch()
    dys = t64([[1.0, 2.2, 0.5, 1.6], [2.5, 0.3, 1.1, 0.0]])
    normal = t64([[0.2, 0.9, 1.8, 0.4], [1.0, 1.4, 0.1, 0.0]])

    def parts():
        enc = m.encode_phonemes(tokens, mask, spk)
        pauses = m.predict_pauses(enc)
        aug = m.encode_augmented(m.insert_pause_embeddings(enc, classes))
        log_d = m.predict_durations(aug).log_durations
        rows = torch.nn.utils.rnn.pad_sequence([torch.tensor(r) for r in aug.phoneme_rows()], batch_first=True)
        pred = log_d.gather(1, rows)
        return pred, cpo_weights(pauses.probs, classes, CFG)

    with torch.no_grad():
        pred, _ = parts()
        arg = (pred - dys).abs() - (pred - normal).abs() + 0.75
        assert float(arg[mask].abs().min()) > 1e-3 and float((pred - dys)[mask].abs().min()) > 1e-3
        assert float((pred - normal)[mask].abs().min()) > 1e-3

    def loss():
        pred, w = parts()
        return cpo_loss(pred, dys, normal, w, CFG, mask=mask)

    assert loss().item() > 0
    assert fd_relative_error(loss, list(m.parameters())) < 1e-4


def test_normal_reference_lookup(tmp_path):
    (tmp_path / "t.txt").write_text("3 5\n4 7.5\n", encoding="utf-8")
    table = NormalDurationTable.from_file(tmp_path / "t.txt")
    ref = normal_reference([3, 4, 3], table)
    assert ref.tolist() == pytest.approx([math.log(5), math.log(7.5), math.log(5)])
    assert ref[0].item() == pytest.approx(1.609438, abs=1e-6)
    assert torch.equal(ref, normal_reference([3, 4, 3], table))
    with pytest.raises(VocabularyError):
        normal_reference([9], table)
    with pytest.raises(ValueError):
        NormalDurationTable({1: 0.0})


def test_weights_detached_in_training_path(rng):
    probs = torch.softmax(torch.from_numpy(rng.normal(size=(3, 4))), -1).requires_grad_()
    w = cpo_weights(probs.detach(), torch.tensor([0, 1, 2]), CFG)
    assert not w.requires_grad
    assert np.all(np.isfinite(w.numpy()))
