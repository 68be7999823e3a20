"""MCD, WER and severity-grouped reports."""
from __future__ import annotations

import math
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from . import kernels
from .corpus import DYSARTHRIC_SEVERITIES, SEVERITIES, SEVERITY_LABELS, MelSpectrogram

MCD_SCALE = 10.0 / math.log(10.0)


@dataclass
class McdConfig:
    n_cepstra: int = 13  # coefficients 1..n_cepstra, c0 excluded
    use_dtw: bool = True


def _frames(mel) -> np.ndarray:
    frames = mel.frames if isinstance(mel, MelSpectrogram) else mel
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[1] == 0:
        raise ValueError("MCD needs non-empty T x D mel matrices")
    return frames


def mel_cepstra(frames, n_cepstra: int = 13) -> np.ndarray:
    """Orthonormal DCT-II of log-mel frames, keeping coefficients 1..n_cepstra."""
    return dct(_frames(frames), type=2, norm="ortho", axis=1)[:, 1 : n_cepstra + 1]


def mcd(ref, syn, cfg: McdConfig | None = None) -> float:
    """Mean cepstral distortion in dB over the DTW path (or truncated frame pairs)."""
    cfg = cfg or McdConfig()
    a, b = _frames(ref), _frames(syn)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    ca, cb = mel_cepstra(a, cfg.n_cepstra), mel_cepstra(b, cfg.n_cepstra)
    if cfg.use_dtw:
        cost = ((ca[:, None, :] - cb[None, :, :]) ** 2).sum(-1)
        path, _ = kernels.dtw_path(cost)
        sq = cost[path[:, 0], path[:, 1]]
    else:
        n = min(len(ca), len(cb))
        sq = ((ca[:n] - cb[:n]) ** 2).sum(-1)
    return float(np.mean(MCD_SCALE * np.sqrt(2.0 * sq)))


_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_text(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def wer(ref_words, hyp_words) -> float:
    """(substitutions + deletions + insertions) / len(ref); strings are normalised first."""
    ref = normalize_text(ref_words) if isinstance(ref_words, str) else list(ref_words)
    hyp = normalize_text(hyp_words) if isinstance(hyp_words, str) else list(hyp_words)
    if not ref:
        raise ValueError("WER is undefined for an empty reference")
    vocab: dict[str, int] = {}
    r = [vocab.setdefault(w, len(vocab)) for w in ref]
    h = [vocab.setdefault(w, len(vocab)) for w in hyp]
    return kernels.edit_distance(r, h) / len(ref)


def energy_distance(x, y) -> float:
    """Energy distance between two samples of row vectors (V-statistic form)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def mean_dist(a, b):
        return float(np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).mean())

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


@dataclass
class EvalReport:
    metric: str
    per_speaker: dict[str, float]
    per_group: dict[str, float]
    overall: float
    counts: dict[str, int] = field(default_factory=dict)

    def columns(self) -> list[tuple[str, float | None]]:
        groups = [s for s in DYSARTHRIC_SEVERITIES]
        if "Control" in self.per_group:
            groups.append("Control")
        cols = [(SEVERITY_LABELS[g], self.per_group.get(g)) for g in groups]
        return cols + [("Overall", self.overall)]

    def render(self) -> str:
        cols = self.columns()
        width = max(9, *(len(name) for name, _ in cols))
        head = " ".join(f"{name:>{width}}" for name, _ in cols)
        vals = " ".join(f"{'--' if v is None else f'{v:.4f}':>{width}}" for _, v in cols)
        return f"{self.metric}\n{head}\n{vals}\n"

    def to_lines(self) -> str:
        lines = [f"metric = {self.metric}", f"overall = {self.overall:.6f}"]
        lines += [f"group.{k} = {v:.6f}" for k, v in self.per_group.items()]
        lines += [f"speaker.{k} = {v:.6f}" for k, v in self.per_speaker.items()]
        lines += [f"count.{k} = {v}" for k, v in self.counts.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_lines() + "\n" + self.render(), encoding="utf-8")


def build_report(per_utt: dict[str, float], records, metric: str = "MCD") -> EvalReport:
    """Per-speaker means, severity means of speaker means, overall = mean of speaker means."""
    by_id = {r.utt_id: r for r in records}
    speaker_vals: dict[str, list[float]] = defaultdict(list)
    speaker_sev: dict[str, str] = {}
    for utt, value in per_utt.items():
        if utt not in by_id:
            raise KeyError(f"utterance {utt!r} has no manifest record")
        rec = by_id[utt]
        speaker_vals[rec.speaker_id].append(float(value))
        speaker_sev[rec.speaker_id] = rec.severity
    if not speaker_vals:
        raise ValueError("no metric values to report")
    per_speaker = {s: float(np.mean(v)) for s, v in speaker_vals.items()}
    sev_vals: dict[str, list[float]] = defaultdict(list)
    for spk, val in per_speaker.items():
        sev_vals[speaker_sev[spk]].append(val)
    per_group = {s: float(np.mean(sev_vals[s])) for s in SEVERITIES if s in sev_vals}
    overall = float(np.mean(list(per_speaker.values())))
    counts = {s: len(v) for s, v in speaker_vals.items()}
    return EvalReport(metric, per_speaker, per_group, overall, counts)
