import json

import numpy as np
import pytest
import torch

from dars import cli
from dars.config import ConfigError, load_train_config, train_config_from_dict
from dars.corpus import load_mel
from dars.experiment import ABLATIONS, ExperimentConfig, ablation_config, experiment_config_from_dict
from dars.model import LOSS_KEYS, DarsModel, MissingStyleError
from dars.trainer import TrainingDivergedError, train, train_group

from conftest import TINY_MODEL, tiny_config


# ---------------------------------------------------------------- config


def test_config_defaults_and_classes():
    cfg = train_config_from_dict({"pauses": {"thresholds_s": [0.1, 0.2, 0.5]}})
    assert cfg.rhythm.n_pause_classes == 5
    assert cfg.strategy == "ASp" and cfg.cpo.margin == 0.75


@pytest.mark.parametrize("data", [
    {"train": {"bogus": 1}},
    {"model": {"flow": {"nope": 2}}},
    {"train": {"cpo_on": True, "rhythm_on": False}},
    {"train": {"lambda_d": -1.0}},
    {"train": {"duration_source": "magic"}},
])
def test_config_errors(data):
    with pytest.raises(ConfigError):
        train_config_from_dict(data)


def test_config_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nepochs = 3\nstrategy = 'dspg'\n[cpo]\nalpha = 0.6\n")
    cfg = load_train_config(path)
    assert (cfg.epochs, cfg.strategy, cfg.cpo.alpha) == (3, "DSpG", 0.6)
    path.write_text("[train\n")
    with pytest.raises(ConfigError):
        load_train_config(path)


# ---------------------------------------------------------------- training


def test_total_is_weighted_sum(toy_corpus, tmp_path):
    cfg = tiny_config(epochs=2, lambda_s=0.5, lambda_prior=2.0, cpo_warmup_accuracy=0.0)
    result = train_group(cfg, toy_corpus.records, _table(toy_corpus), tmp_path)
    lam = {"L_s": 0.5, "L_d": 1.0, "L_cp": 1.0, "L_cfm": 1.0, "L_prior": 2.0, "L_vq": 1.0}
    assert result.log
    for entry in result.log:
        assert entry["total"] == pytest.approx(sum(lam[k] * entry[k] for k in LOSS_KEYS), rel=1e-6)  # float32 sums
    assert any(e["cpo_active"] and e["L_cp"] > 0 for e in result.log)
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == len(result.log) and json.loads(lines[0])["step"] == 0


def _table(corpus):
    from dars.cpo import NormalDurationTable

    return NormalDurationTable.from_file(corpus.normal_table_path)


def test_training_is_deterministic(toy_corpus):
    cfg = tiny_config(epochs=1)
    a = train_group(cfg, toy_corpus.records, _table(toy_corpus))
    b = train_group(cfg, toy_corpus.records, _table(toy_corpus))
    assert [e["total"] for e in a.log] == [e["total"] for e in b.log]


def test_cpo_requires_table(toy_corpus):
    with pytest.raises(ValueError):
        train_group(tiny_config(epochs=1), toy_corpus.records, None)


def test_strategy_groups(toy_corpus, tmp_path):
    results = train(tiny_config(epochs=1), toy_corpus.manifest_path, "dspg", tmp_path)
    assert set(results) <= {"Severe", "ModSev", "Moderate", "Mild"} and len(results) >= 2
    for key in results:
        assert (tmp_path / key / "flow.ckpt").exists()


def test_divergence_raises_and_keeps_checkpoint(toy_corpus, tmp_path, monkeypatch):
    original = DarsModel.losses
    calls = {"n": 0}

    def poisoned(self, *args, **kwargs):
        out = original(self, *args, **kwargs)
        calls["n"] += 1
        if calls["n"] > 3:
            out["total"] = out["total"] * float("nan")
        return out

    monkeypatch.setattr(DarsModel, "losses", poisoned)
    with pytest.raises(TrainingDivergedError):
        train_group(tiny_config(epochs=3), toy_corpus.records, _table(toy_corpus), tmp_path)
    assert DarsModel.load(tmp_path).speakers


# ---------------------------------------------------------------- checkpoints and synthesis


def test_checkpoint_round_trip(trained_dir, toy_corpus):
    from dars.data import collate, prepare_examples

    a = DarsModel.load(trained_dir)
    b = DarsModel.load(trained_dir)
    index = {s: i for i, s in enumerate(a.speakers)}
    ex = prepare_examples(toy_corpus.records[:6], index, a.cfg.pause_thresholds_s, a.cfg.frame_shift_s,
                          _table(toy_corpus))
    batch = collate(ex)
    la = a.losses(batch, generator=torch.Generator().manual_seed(0))
    lb = b.losses(batch, generator=torch.Generator().manual_seed(0))
    for k in LOSS_KEYS:
        assert la[k].item() == lb[k].item()
    a.save(trained_dir.parent / "copy")
    for name in ("rhythm", "style", "flow"):
        assert (trained_dir / f"{name}.ckpt").read_bytes() == (trained_dir.parent / "copy" / f"{name}.ckpt").read_bytes()


def test_length_law_and_determinism(trained_dir):
    model = DarsModel.load(trained_dir)
    out = model.synthesize([3, 5, 7, 9, 11], model.speakers[0], seed=4)
    assert out.mel.shape == (int(out.durations.sum()), 80)
    assert len(out.durations) == 5 + int((out.pause_classes > 0).sum())
    again = model.synthesize([3, 5, 7, 9, 11], model.speakers[0], seed=4)
    assert np.array_equal(out.mel, again.mel)
    other = model.synthesize([3, 5, 7, 9, 11], model.speakers[0], seed=5)
    assert not np.array_equal(out.mel, other.mel)


def test_reference_mel_conditions_output(trained_dir, toy_corpus):
    model = DarsModel.load(trained_dir)
    refs = {}
    for rec in toy_corpus.records:
        refs.setdefault(rec.severity, load_mel(rec.mel_path).frames)
    a, b = list(refs.values())[:2]
    spk = model.speakers[0]
    ya = model.synthesize([4, 8, 12], spk, ref_mel=a, seed=0)
    yb = model.synthesize([4, 8, 12], spk, ref_mel=b, seed=0)
    assert ya.mel.shape == yb.mel.shape and not np.array_equal(ya.mel, yb.mel)


def test_cached_style_and_missing_style(trained_dir):
    model = DarsModel.load(trained_dir)
    assert model.synthesize([1, 2, 3], model.speakers[1]).mel.size
    model.style_cache.counts.zero_()
    with pytest.raises(MissingStyleError):
        model.synthesize([1, 2, 3], model.speakers[1])
    with pytest.raises(KeyError):
        model.synthesize([1, 2, 3], "nobody")


# ---------------------------------------------------------------- experiment config


def test_experiment_config(tmp_path):
    cfg = experiment_config_from_dict({
        "experiment": {"seeds": [4], "strategies": ["asp", "ssp"], "baseline_strategies": ["ASp"]},
        "train": {"epochs": 1},
    })
    assert cfg.seeds == (4,) and cfg.train.epochs == 1
    assert cfg.runs() == [("E5", "ASp"), ("E6", "ASp"), ("E9", "ASp"), ("E9", "SSp")]
    with pytest.raises(ConfigError):
        experiment_config_from_dict({"experiment": {"oops": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig(ablations=("E42",))


def test_ablation_flags():
    base = tiny_config()
    assert not ablation_config(base, "E5").rhythm_on
    e7, e8 = ablation_config(base, "E7"), ablation_config(base, "E8")
    assert (e7.cpo.alpha, e7.cpo.beta, e8.cpo.alpha, e8.cpo.beta) == (0.5, 0.5, 0.7, 0.3)
    assert ablation_config(base, "E9").style_on and set(ABLATIONS) == {"E5", "E6", "E7", "E8", "E9"}


# ---------------------------------------------------------------- CLI


def test_cli_end_to_end(toy_corpus, trained_dir, tmp_path, capsys):
    syn = tmp_path / "syn"
    syn.mkdir()
    valid = [r for r in toy_corpus.records if r.split == "valid"][:3]
    for rec in valid:
        ids = ",".join(map(str, rec.phonemes))
        assert cli.main(["synthesize", "--ckpt", str(trained_dir), "--text-ids", ids,
                         "--ref-mel", str(rec.mel_path), "--out", str(syn / f"{rec.utt_id}.mel")]) == 0
    assert cli.main(["eval", "--metric", "mcd", "--manifest", str(toy_corpus.manifest_path),
                     "--syn-dir", str(syn), "--report", str(tmp_path / "mcd.txt")]) == 0
    assert "overall = " in (tmp_path / "mcd.txt").read_text()

    refs = tmp_path / "refs.tsv"
    refs.write_text("".join(f"{r.utt_id}\tthe cat sat\n" for r in valid))
    for r in valid:
        (syn / f"{r.utt_id}.txt").write_text("the cat")
    assert cli.main(["eval", "--metric", "wer", "--manifest", str(toy_corpus.manifest_path),
                     "--syn-dir", str(syn), "--refs", str(refs), "--report", str(tmp_path / "wer.txt")]) == 0
    assert "overall = 0.333333" in (tmp_path / "wer.txt").read_text()


def test_cli_errors(tmp_path, trained_dir, capsys):
    assert cli.main(["synthesize", "--ckpt", str(tmp_path), "--text-ids", "1 2", "--speaker", "F01",
                     "--out", str(tmp_path / "x.mel")]) == 1
    assert "CheckpointError" in capsys.readouterr().err
    assert cli.main(["synthesize", "--ckpt", str(trained_dir), "--text-ids", "a b", "--speaker", "F01",
                     "--out", str(tmp_path / "x.mel")]) == 1
    bad = tmp_path / "m.tsv"
    bad.write_text("broken line\n")
    assert cli.main(["train", "--manifest", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "ManifestError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["train"])


def test_cli_gen_corpus(tmp_path, capsys):
    assert cli.main(["gen-corpus", "--seed", "1", "--n-utts", "12", "--out", str(tmp_path)]) == 0
    assert "wrote 12 utterances" in capsys.readouterr().out
