"""Monotonic alignment search, duration extraction and pause-class labelling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import AlignmentToken, parse_alignment, read_alignment

DEFAULT_PAUSE_THRESHOLDS_S = (0.15, 0.40)


class AlignmentInfeasibleError(ValueError):
    """No monotone surjective path exists (fewer frames than phonemes)."""


class AlignmentFormatError(ValueError):
    """Alignment tokens overlap or are out of order."""


@dataclass(frozen=True)
class AlignmentPath:
    assignment: np.ndarray  # length T, phoneme index per frame
    n_phonemes: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-D sequence")
        steps = np.diff(a)
        if a[0] != 0 or a[-1] != self.n_phonemes - 1 or np.any((steps != 0) & (steps != 1)):
            raise ValueError("assignment is not monotone and surjective")

    @property
    def n_frames(self) -> int:
        return int(self.assignment.size)


@dataclass(frozen=True)
class PauseLabelSequence:
    labels: np.ndarray
    thresholds_s: tuple[float, ...]

    @property
    def n_classes(self) -> int:
        return len(self.thresholds_s) + 2


def monotonic_alignment_search(log_lik) -> AlignmentPath:
    """Highest-scoring monotone, surjective phoneme-per-frame assignment.

    ``log_lik`` is N x T. Frames may stay on the current phoneme or advance by
    one; on equal scores the backtrace stays on the current phoneme.
    """
    log_lik = np.asarray(log_lik, dtype=np.float64)
    if log_lik.ndim != 2:
        raise ValueError("log_lik must be an N x T matrix")
    n, t = log_lik.shape
    if n < 1:
        raise ValueError("need at least one phoneme")
    if t < n:
        raise AlignmentInfeasibleError(f"{t} frames cannot cover {n} phonemes")
    if not np.all(np.isfinite(log_lik)):
        raise ValueError("log_lik contains non-finite entries")
    assignment, _ = kernels.mas_path(log_lik)
    return AlignmentPath(assignment, n)


def path_score(log_lik, path: AlignmentPath) -> float:
    log_lik = np.asarray(log_lik, dtype=np.float64)
    return float(log_lik[path.assignment, np.arange(path.n_frames)].sum())


def durations_from_path(path: AlignmentPath, n_phonemes: int) -> np.ndarray:
    if n_phonemes != path.n_phonemes:
        raise ValueError(f"path covers {path.n_phonemes} phonemes, expected {n_phonemes}")
    return np.bincount(path.assignment, minlength=n_phonemes).astype(np.int64)


def _tokens(content) -> list[AlignmentToken]:
    if isinstance(content, str):
        return parse_alignment(content)
    return list(content)


def check_ordering(tokens) -> None:
    for prev, cur in zip(tokens, tokens[1:]):
        if cur.start < prev.end:
            raise AlignmentFormatError(
                f"token {cur.kind} [{cur.start}, {cur.end}) overlaps [{prev.start}, {prev.end})"
            )


def silence_after_phonemes(content) -> tuple[list[int], np.ndarray]:
    """Phoneme ids and total SIL frames immediately following each phoneme.

    Silence before the first phoneme is dropped.
    """
    tokens = _tokens(content)
    check_ordering(tokens)
    ids: list[int] = []
    sil: list[int] = []
    for tok in tokens:
        if tok.kind == "P":
            ids.append(tok.token_id)
            sil.append(0)
        elif ids:
            sil[-1] += tok.n_frames
    return ids, np.asarray(sil, dtype=np.int64)


def bucket_pauses(pause_s, thresholds_s=DEFAULT_PAUSE_THRESHOLDS_S) -> np.ndarray:
    """Class 0 for zero duration, then one class per threshold interval (upper-inclusive)."""
    thresholds = np.asarray(thresholds_s, dtype=np.float64)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    pause_s = np.asarray(pause_s, dtype=np.float64)
    labels = 1 + np.searchsorted(thresholds, pause_s, side="left")
    return np.where(pause_s > 0, labels, 0).astype(np.int64)


def pause_labels_from_alignment(
    content, thresholds_s=DEFAULT_PAUSE_THRESHOLDS_S, frame_shift_s: float = 0.01
) -> PauseLabelSequence:
    _, sil_frames = silence_after_phonemes(content)
    labels = bucket_pauses(sil_frames * frame_shift_s, thresholds_s)
    return PauseLabelSequence(labels, tuple(float(x) for x in thresholds_s))


@dataclass
class RhythmTargets:
    """Per-utterance targets derived from an alignment file."""

    phonemes: list[int]
    phone_frames: np.ndarray  # own frames per phoneme
    gap_frames: np.ndarray  # frames between this phoneme's end and the next phoneme (or utterance end)
    leading_frames: int
    pause_classes: np.ndarray

    def merged_durations(self) -> np.ndarray:
        """Durations with every silence absorbed by the preceding phoneme."""
        d = self.phone_frames + self.gap_frames
        d[0] += self.leading_frames
        return d

    def augmented_durations(self) -> np.ndarray:
        """Durations over the pause-augmented sequence (one row per inserted pause)."""
        out = []
        for i, (p, g, c) in enumerate(zip(self.phone_frames, self.gap_frames, self.pause_classes)):
            p = int(p) + (self.leading_frames if i == 0 else 0)
            if c > 0:
                out.extend([p, int(g)])
            else:
                out.append(p + int(g))
        return np.asarray(out, dtype=np.int64)


def rhythm_targets(content, n_frames: int, thresholds_s=DEFAULT_PAUSE_THRESHOLDS_S,
                   frame_shift_s: float = 0.01) -> RhythmTargets:
    tokens = _tokens(content)
    check_ordering(tokens)
    phones = [t for t in tokens if t.kind == "P"]
    if not phones:
        raise AlignmentFormatError("alignment has no phoneme tokens")
    starts = [t.start for t in phones[1:]] + [n_frames]
    phone_frames = np.array([t.n_frames for t in phones], dtype=np.int64)
    gap_frames = np.array([s - t.end for t, s in zip(phones, starts)], dtype=np.int64)
    if np.any(gap_frames < 0):
        raise AlignmentFormatError("alignment extends past the mel length")
    labels = pause_labels_from_alignment(tokens, thresholds_s, frame_shift_s).labels
    return RhythmTargets([t.token_id for t in phones], phone_frames, gap_frames, phones[0].start, labels)


def read_alignment_targets(path, n_frames: int, thresholds_s=DEFAULT_PAUSE_THRESHOLDS_S,
                           frame_shift_s: float = 0.01) -> RhythmTargets:
    return rhythm_targets(read_alignment(path), n_frames, thresholds_s, frame_shift_s)
