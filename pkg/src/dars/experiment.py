"""Ablation and grouping-strategy experiments on the toy corpus."""
from __future__ import annotations

import dataclasses
import logging
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, train_config_from_dict
from .corpus import SEVERITIES, Strategy, ToyCorpusConfig, generate_toy_corpus, group_records, load_mel
from .cpo import CpoConfig, NormalDurationTable
from .metrics import EvalReport, McdConfig, build_report, mcd
from .trainer import train_group

log = logging.getLogger(__name__)

# Ablation ladder: flag sets layered on top of a base TrainConfig.
ABLATIONS = {
    "E5": dict(rhythm_on=False, cpo_on=False, style_on=False),
    "E6": dict(rhythm_on=True, cpo_on=False, style_on=False),
    "E7": dict(rhythm_on=True, cpo_on=True, style_on=False, cpo=CpoConfig(alpha=0.5, beta=0.5)),
    "E8": dict(rhythm_on=True, cpo_on=True, style_on=False, cpo=CpoConfig(alpha=0.7, beta=0.3)),
    "E9": dict(rhythm_on=True, cpo_on=True, style_on=True, cpo=CpoConfig(alpha=0.7, beta=0.3)),
}


def ablation_config(base: TrainConfig, name: str) -> TrainConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r} (known: {', '.join(ABLATIONS)})")
    flags = dict(ABLATIONS[name])
    if "cpo" in flags:
        flags["cpo"] = dataclasses.replace(flags["cpo"], margin=base.cpo.margin)
    return base.replace(**flags)


@dataclass
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    n_utts: int = 300
    corpus: ToyCorpusConfig = field(default_factory=ToyCorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: str = "E5"
    dars: str = "E9"
    ablations: tuple[str, ...] = ("E5", "E6", "E9")  # run on ASp
    strategies: tuple[str, ...] = ("ASp", "DSpG", "SSp")  # run for baseline and DARS
    baseline_strategies: tuple[str, ...] | None = None  # defaults to ``strategies``
    eval_split: str = "valid"
    synth_seed: int = 0
    n_euler_steps: int | None = None
    work_dir: str | None = None

    def __post_init__(self):
        for name in (self.baseline, self.dars, *self.ablations):
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.strategies = tuple(Strategy.parse(s).value for s in self.strategies)
        if self.baseline_strategies is not None:
            self.baseline_strategies = tuple(Strategy.parse(s).value for s in self.baseline_strategies)

    def runs(self) -> list[tuple[str, str]]:
        """(ablation, strategy) pairs in execution order, without duplicates."""
        out = [(a, Strategy.ASP.value) for a in self.ablations]
        out += [(self.baseline, s) for s in (self.baseline_strategies or self.strategies)]
        out += [(self.dars, s) for s in self.strategies]
        return list(dict.fromkeys(out))


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    exp = dict(data.get("experiment", {}))
    names = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"corpus", "train"}
    unknown = set(exp) - names
    if unknown:
        raise ConfigError(f"unknown option(s) in [experiment]: {', '.join(sorted(unknown))}")
    for key in ("seeds", "ablations", "strategies", "baseline_strategies"):
        if exp.get(key) is not None:
            exp[key] = tuple(exp[key])
    try:
        corpus = ToyCorpusConfig.from_dict(data.get("corpus", {}))
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(corpus=corpus, train=train_config_from_dict(data), **exp)


@dataclass
class ExperimentResult:
    mcd: dict[tuple[str, str], float]  # (ablation, strategy) -> seed-averaged overall MCD
    per_seed: dict[tuple[str, str], list[float]]
    reports: dict[tuple[str, str], EvalReport]  # seed-averaged reports
    baseline: str
    dars: str
    seconds: float = 0.0

    @property
    def baseline_report(self) -> EvalReport:
        return self.reports[(self.baseline, Strategy.ASP.value)]

    @property
    def dars_report(self) -> EvalReport:
        return self.reports[(self.dars, Strategy.ASP.value)]

    def table(self) -> str:
        order = ("ASp", "DSpG", "SSp")
        strategies = [s for s in order if any(k[1] == s for k in self.mcd)]
        names = list(dict.fromkeys(k[0] for k in self.mcd))
        lines = ["MCD (validation, mean over seeds)", f"{'':6}" + "".join(f"{s:>10}" for s in strategies)]
        for name in names:
            cells = [self.mcd.get((name, s)) for s in strategies]
            lines.append(f"{name:6}" + "".join(f"{'--' if v is None else f'{v:.4f}':>10}" for v in cells))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        parts = [self.table(), f"runtime_s = {self.seconds:.1f}\n"]
        for (name, strategy), report in self.reports.items():
            parts.append(f"[{name} {strategy}]\n{report.render()}")
        Path(path).write_text("\n".join(parts), encoding="utf-8")


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Average per-speaker, per-group and overall values over independent runs."""
    def avg(dicts):
        keys = list(dict.fromkeys(k for d in dicts for k in d))
        return {k: float(np.mean([d[k] for d in dicts if k in d])) for k in keys}

    per_group = avg([r.per_group for r in reports])
    per_group = {s: per_group[s] for s in SEVERITIES if s in per_group}
    counts: dict[str, int] = {}
    for r in reports:
        for k, v in r.counts.items():
            counts[k] = counts.get(k, 0) + v
    return EvalReport(reports[0].metric, avg([r.per_speaker for r in reports]), per_group,
                      float(np.mean([r.overall for r in reports])), counts)


def evaluate_mcd(models: dict, records, synth_seed: int = 0, n_steps: int | None = None,
                 mcd_cfg: McdConfig | None = None) -> dict[str, float]:
    """Synthesize each record with its own mel as style reference and score it against that mel.

    ``models`` maps speaker id to the model trained on that speaker's group.
    """
    out = {}
    for rec in records:
        ref = load_mel(rec.mel_path).frames
        syn = models[rec.speaker_id].synthesize(rec.phonemes, rec.speaker_id, ref_mel=ref,
                                                seed=synth_seed, n_steps=n_steps)
        out[rec.utt_id] = mcd(ref, syn.mel, mcd_cfg)
    return out


def run_single(cfg: TrainConfig, corpus, strategy, eval_split="valid", synth_seed=0,
               n_steps=None) -> EvalReport:
    """Train every group of ``strategy`` on a generated corpus and score its validation split."""
    table = NormalDurationTable.from_file(corpus.normal_table_path)
    models = {}
    for group in group_records(corpus.records, Strategy.parse(strategy)):
        result = train_group(cfg, group.records, table, None, group.group_key)
        for spk in {r.speaker_id for r in group.records}:
            models[spk] = result.model
    held_out = [r for r in corpus.records if r.split == eval_split and r.speaker_id in models]
    if not held_out:
        raise ValueError(f"corpus has no {eval_split!r} records")
    scores = evaluate_mcd(models, held_out, synth_seed, n_steps)
    return build_report(scores, held_out, "MCD")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train the configured ablations/strategies for every seed and compare validation MCD."""
    start = time.perf_counter()
    runs = config.runs()
    per_seed: dict[tuple[str, str], list[EvalReport]] = {r: [] for r in runs}
    with tempfile.TemporaryDirectory(prefix="dars-exp-") as tmp:
        root = Path(config.work_dir) if config.work_dir else Path(tmp)
        for seed in config.seeds:
            corpus = generate_toy_corpus(seed, config.n_utts, config.corpus, root / f"corpus_seed{seed}")
            for name, strategy in runs:
                cfg = ablation_config(config.train, name).replace(seed=seed)
                report = run_single(cfg, corpus, strategy, config.eval_split, config.synth_seed,
                                    config.n_euler_steps)
                per_seed[(name, strategy)].append(report)
                log.info("seed %d %s %s: MCD %.4f", seed, name, strategy, report.overall)
    reports = {k: mean_report(v) for k, v in per_seed.items()}
    return ExperimentResult(
        {k: r.overall for k, r in reports.items()},
        {k: [r.overall for r in v] for k, v in per_seed.items()},
        reports,
        config.baseline,
        config.dars,
        time.perf_counter() - start,
    )

