"""Turning manifest records into padded training batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .alignment import read_alignment_targets
from .corpus import load_mel
from .cpo import NormalDurationTable


@dataclass
class Example:
    utt_id: str
    speaker: int
    tokens: np.ndarray  # (N,)
    pause_classes: np.ndarray  # (N,)
    merged_durations: np.ndarray  # (N,) silences absorbed by the preceding phoneme
    augmented_durations: np.ndarray  # (N',) teacher-forced pause rows
    normal_frames: np.ndarray  # (N,) or empty when no reference table is available
    mel: np.ndarray  # (T, D) float32


@dataclass
class Batch:
    utt_ids: list[str]
    speakers: torch.Tensor  # (B,)
    tokens: torch.Tensor  # (B, N)
    token_mask: torch.Tensor
    pause_classes: torch.Tensor  # (B, N)
    merged_durations: torch.Tensor  # (B, N)
    augmented_durations: list[torch.Tensor]
    normal_log_d: torch.Tensor | None  # (B, N)
    mel: torch.Tensor  # (B, T, D)
    mel_mask: torch.Tensor  # (B, T)

    def __len__(self):
        return len(self.utt_ids)


def prepare_examples(records, speaker_index: dict[str, int], thresholds_s, frame_shift_s,
                     normal_table: NormalDurationTable | None = None) -> list[Example]:
    out = []
    for rec in records:
        mel = load_mel(rec.mel_path)
        targets = read_alignment_targets(rec.alignment_path, mel.n_frames, thresholds_s, frame_shift_s)
        if tuple(targets.phonemes) != tuple(rec.phonemes):
            raise ValueError(f"{rec.utt_id}: alignment phonemes differ from the manifest")
        normal = np.array([normal_table.frames(t) for t in rec.phonemes]) if normal_table else np.zeros(0)
        out.append(
            Example(
                rec.utt_id,
                speaker_index[rec.speaker_id],
                np.asarray(rec.phonemes, dtype=np.int64),
                targets.pause_classes,
                targets.merged_durations(),
                targets.augmented_durations(),
                normal,
                mel.frames.astype(np.float32),
            )
        )
    return out


def collate(examples: list[Example], dtype=torch.float32) -> Batch:
    n = max(len(e.tokens) for e in examples)
    t = max(len(e.mel) for e in examples)
    b = len(examples)
    d = examples[0].mel.shape[1]
    tokens = torch.zeros(b, n, dtype=torch.long)
    classes = torch.zeros(b, n, dtype=torch.long)
    merged = torch.ones(b, n, dtype=torch.long)
    token_mask = torch.zeros(b, n, dtype=torch.bool)
    mel = torch.zeros(b, t, d, dtype=dtype)
    mel_mask = torch.zeros(b, t, dtype=torch.bool)
    have_normal = all(len(e.normal_frames) for e in examples)
    normal = torch.zeros(b, n, dtype=dtype) if have_normal else None
    for i, e in enumerate(examples):
        k = len(e.tokens)
        tokens[i, :k] = torch.from_numpy(e.tokens)
        classes[i, :k] = torch.from_numpy(e.pause_classes)
        merged[i, :k] = torch.from_numpy(e.merged_durations)
        token_mask[i, :k] = True
        mel[i, : len(e.mel)] = torch.from_numpy(e.mel).to(dtype)
        mel_mask[i, : len(e.mel)] = True
        if normal is not None:
            normal[i, :k] = torch.log(torch.as_tensor(e.normal_frames, dtype=dtype))
    return Batch(
        [e.utt_id for e in examples],
        torch.tensor([e.speaker for e in examples], dtype=torch.long),
        tokens,
        token_mask,
        classes,
        merged,
        [torch.from_numpy(e.augmented_durations) for e in examples],
        normal,
        mel,
        mel_mask,
    )


def iterate_batches(examples, batch_size, generator: torch.Generator | None = None, shuffle=True):
    order = torch.randperm(len(examples), generator=generator).tolist() if shuffle else range(len(examples))
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start : start + batch_size]])
