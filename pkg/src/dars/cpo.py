"""Contrastive preference loss on durations, its dynamic weights, and normal-speech references."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch

from .corpus import read_normal_table
from .rhythm import VocabularyError


@dataclass
class CpoConfig:
    alpha: float = 0.7  # weight scale at pause positions
    beta: float = 0.3  # weight scale at non-pause positions
    margin: float = 0.75  # log-duration units

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.margin < 0:
            raise ValueError("alpha, beta and margin must be non-negative")
        if self.alpha < self.beta:
            warnings.warn("alpha < beta: pause positions are weighted below non-pause positions", stacklevel=2)


def cpo_weights(probs, labels, cfg: CpoConfig) -> torch.Tensor:
    """alpha * p(true class) at pause positions, beta * p(no pause) elsewhere.

    ``probs`` is (..., N, K), ``labels`` is (..., N).
    """
    probs = torch.as_tensor(probs)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probs.shape[:-1] != labels.shape:
        raise ValueError(f"probs {tuple(probs.shape)} and labels {tuple(labels.shape)} disagree")
    p_true = probs.gather(-1, labels.clamp(min=0)[..., None])[..., 0]
    return torch.where(labels > 0, cfg.alpha * p_true, cfg.beta * probs[..., 0])


def cpo_loss(pred_log_d, dys_log_d, normal_log_d, weights, cfg: CpoConfig, mask=None) -> torch.Tensor:
    """Weighted hinge: predictions should sit ``margin`` closer to dysarthric than to normal durations.

    All inputs are over the N pre-insertion phoneme positions, shape (N,) or (B, N).
    Reduction is a per-utterance mean followed by a batch mean.
    """
    tensors = [torch.as_tensor(x) for x in (pred_log_d, dys_log_d, normal_log_d, weights)]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ValueError(f"shape mismatch: {[tuple(t.shape) for t in tensors]}")
    pred, dys, normal, w = (t if t.dim() > 1 else t[None] for t in tensors)
    # (|p-d| + m) - |p-dn| is exactly <= 0 whenever |p-d| + m <= |p-dn| holds in floating point
    hinge = torch.relu(((pred - dys).abs() + cfg.margin) - (pred - normal).abs())
    if mask is None:
        return (w * hinge).mean(dim=1).mean()
    m = torch.as_tensor(mask).reshape(pred.shape).to(hinge.dtype)
    return ((w * hinge * m).sum(dim=1) / m.sum(dim=1)).mean()


class NormalDurationTable:
    """Per-phoneme mean normal-speech frame counts, read-only after construction."""

    def __init__(self, table: dict[int, float]):
        if any(v <= 0 for v in table.values()):
            raise ValueError("normal durations must be positive")
        self._table = dict(table)

    @classmethod
    def from_file(cls, path) -> "NormalDurationTable":
        return cls(read_normal_table(path))

    def __contains__(self, token) -> bool:
        return int(token) in self._table

    def frames(self, token: int) -> float:
        try:
            return self._table[int(token)]
        except KeyError:
            raise VocabularyError(f"phoneme {token} missing from normal-duration table") from None

    def as_dict(self) -> dict[int, float]:
        return dict(self._table)


def normal_reference(tokens, provider: NormalDurationTable) -> torch.Tensor:
    """Log normal-speech durations for a pause-free phoneme sequence."""
    return torch.tensor([math.log(provider.frames(t)) for t in tokens], dtype=torch.float64)
