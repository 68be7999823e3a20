"""Multi-stage rhythm predictor: pause classification, pause insertion, duration regression."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

LOG_EPS = 1e-9


class VocabularyError(ValueError):
    """Token id outside the model vocabulary."""


class DurationDomainError(ValueError):
    """Duration target is not a positive frame count."""


@dataclass
class EncodedSequence:
    """Batched hidden states with per-row provenance.

    ``tags[b][j]`` is ``("phoneme", i)`` for the i-th input phoneme or
    ``("pause", k)`` for an inserted class-k pause row.
    """

    hidden: torch.Tensor  # (B, L, H)
    mask: torch.Tensor  # (B, L) bool, True on valid rows
    tags: list

    @property
    def lengths(self) -> list[int]:
        return [len(t) for t in self.tags]

    def phoneme_rows(self) -> list[list[int]]:
        """Row index of every original phoneme, per batch item."""
        return [[j for j, (kind, _) in enumerate(t) if kind == "phoneme"] for t in self.tags]

    def strip_pauses(self) -> "EncodedSequence":
        rows = self.phoneme_rows()
        seqs = [self.hidden[b, r] for b, r in enumerate(rows)]
        hidden, mask = pad_rows(seqs)
        tags = [[("phoneme", i) for i in range(len(r))] for r in rows]
        return EncodedSequence(hidden, mask, tags)


@dataclass
class PausePrediction:
    logits: torch.Tensor  # (B, N, K)
    mask: torch.Tensor  # (B, N)

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)

    def log_probs(self) -> torch.Tensor:
        return torch.log_softmax(self.logits, dim=-1)

    def classes(self) -> torch.Tensor:
        return self.logits.argmax(dim=-1) * self.mask


@dataclass
class DurationPrediction:
    log_durations: torch.Tensor  # (B, L)
    mask: torch.Tensor

    def frames(self) -> torch.Tensor:
        """Integer frame counts for synthesis: exp, round, clamp to >= 1."""
        d = torch.clamp(torch.round(torch.exp(self.log_durations)), min=1).long()
        return d * self.mask.long()


def pad_rows(seqs, value=0.0):
    lengths = [s.shape[0] for s in seqs]
    hidden = nn.utils.rnn.pad_sequence(seqs, batch_first=True, padding_value=value)
    idx = torch.arange(hidden.shape[1])
    mask = idx[None, :] < torch.tensor(lengths)[:, None]
    return hidden, mask


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return pe


class SelfAttentionStack(nn.Module):
    def __init__(self, in_dim, hidden, n_layers, n_heads, ffn_dim):
        super().__init__()
        self.proj = nn.Linear(in_dim, hidden) if in_dim != hidden else nn.Identity()
        layer = nn.TransformerEncoderLayer(
            hidden, n_heads, ffn_dim, dropout=0.0, batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(hidden)
        self.hidden = hidden

    def forward(self, x, mask):
        x = self.proj(x)
        x = x + sinusoidal_positions(x.shape[1], self.hidden, x.dtype)[None]
        x = self.layers(x, src_key_padding_mask=~mask)
        return self.norm(x) * mask[..., None]


class VariancePredictor(nn.Module):
    """Two masked conv blocks and a linear head; shared shape for pause and duration predictors."""

    def __init__(self, in_dim, filter_dim, out_dim, kernel_size=3, zero_init=False):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(in_dim, filter_dim, kernel_size, padding=pad)
        self.norm1 = nn.LayerNorm(filter_dim)
        self.conv2 = nn.Conv1d(filter_dim, filter_dim, kernel_size, padding=pad)
        self.norm2 = nn.LayerNorm(filter_dim)
        self.out = nn.Linear(filter_dim, out_dim)
        if zero_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, x, mask):
        m = mask[..., None].to(x.dtype)
        h = self.conv1((x * m).transpose(1, 2)).transpose(1, 2)
        h = self.norm1(F.relu(h)) * m
        h = self.conv2(h.transpose(1, 2)).transpose(1, 2)
        h = self.norm2(F.relu(h)) * m
        return self.out(h) * m


@dataclass
class RhythmConfig:
    vocab_size: int = 24
    n_speakers: int = 1
    n_pause_classes: int = 4
    phoneme_hidden: int = 64
    phoneme_layers: int = 2
    phoneme_heads: int = 4
    phoneme_ffn: int = 128
    augmented_hidden: int = 128
    augmented_layers: int = 4
    augmented_heads: int = 4
    augmented_ffn: int = 256
    predictor_filter: int = 64


class RhythmPredictor(nn.Module):
    """Phoneme encoder -> pause predictor -> pause insertion -> augmented encoder -> durations."""

    def __init__(self, cfg: RhythmConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.phoneme_hidden)
        self.speaker = nn.Embedding(max(cfg.n_speakers, 1), cfg.phoneme_hidden)
        nn.init.normal_(self.speaker.weight, std=0.1)
        self.phoneme_encoder = SelfAttentionStack(
            cfg.phoneme_hidden, cfg.phoneme_hidden, cfg.phoneme_layers, cfg.phoneme_heads, cfg.phoneme_ffn
        )
        self.pause_predictor = VariancePredictor(
            cfg.phoneme_hidden, cfg.predictor_filter, cfg.n_pause_classes, zero_init=True
        )
        self.pause_embed = nn.Embedding(cfg.n_pause_classes, cfg.phoneme_hidden)
        self.augmented_encoder = SelfAttentionStack(
            cfg.phoneme_hidden, cfg.augmented_hidden, cfg.augmented_layers, cfg.augmented_heads, cfg.augmented_ffn
        )
        self.duration_predictor = VariancePredictor(cfg.augmented_hidden, cfg.predictor_filter, 1)

    # -- stage 1
    def encode_phonemes(self, tokens, mask=None, speakers=None) -> EncodedSequence:
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens[None]
        if mask is None:
            mask = torch.ones_like(tokens, dtype=torch.bool)
        if tokens.numel() == 0 or not bool(mask.any(dim=1).all()):
            raise ValueError("token sequence must be non-empty")
        valid = tokens[mask]
        if bool(((valid < 0) | (valid >= self.cfg.vocab_size)).any()):
            raise VocabularyError(f"token id outside vocabulary [0, {self.cfg.vocab_size})")
        x = self.embed(tokens)
        if speakers is not None:
            speakers = torch.as_tensor(speakers, dtype=torch.long).reshape(-1)
            x = x + self.speaker(speakers)[:, None, :]
        hidden = self.phoneme_encoder(x, mask)
        lengths = mask.sum(dim=1).tolist()
        tags = [[("phoneme", i) for i in range(n)] for n in lengths]
        return EncodedSequence(hidden, mask, tags)

    # -- stage 2
    def predict_pauses(self, enc: EncodedSequence) -> PausePrediction:
        return PausePrediction(self.pause_predictor(enc.hidden, enc.mask), enc.mask)

    def insert_pause_embeddings(self, enc: EncodedSequence, classes) -> EncodedSequence:
        return insert_pause_embeddings(enc, classes, self.pause_embed.weight)

    # -- stage 3
    def encode_augmented(self, enc: EncodedSequence) -> EncodedSequence:
        return EncodedSequence(self.augmented_encoder(enc.hidden, enc.mask), enc.mask, enc.tags)

    def predict_durations(self, enc: EncodedSequence) -> DurationPrediction:
        return DurationPrediction(self.duration_predictor(enc.hidden, enc.mask)[..., 0], enc.mask)


def insert_pause_embeddings(enc: EncodedSequence, classes, pause_table: torch.Tensor) -> EncodedSequence:
    """After each phoneme with class k > 0, insert row ``pause_table[k]``.

    ``classes`` is (B, N) and comes from ground truth (teacher forcing) or from
    ``PausePrediction.classes()``.
    """
    classes = torch.as_tensor(classes, dtype=torch.long)
    if classes.dim() == 1:
        classes = classes[None]
    seqs, tags = [], []
    for b, n in enumerate(enc.lengths):
        cls = classes[b, :n].tolist()
        if len(cls) != n:
            raise ValueError(f"expected {n} pause classes, got {len(cls)}")
        rows, row_tags = [], []
        for i, k in enumerate(cls):
            rows.append(enc.hidden[b, i])
            row_tags.append(("phoneme", i))
            if k > 0:
                rows.append(pause_table[k])
                row_tags.append(("pause", k))
        seqs.append(torch.stack(rows))
        tags.append(row_tags)
    hidden, mask = pad_rows(seqs)
    return EncodedSequence(hidden, mask, tags)


def pause_cross_entropy(pred: PausePrediction, labels, eps: float = LOG_EPS) -> torch.Tensor:
    """Mean over positions of -log p(true class), per utterance, then over the batch.

    log-probabilities are floored at log(eps) so degenerate predictions stay finite.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() == 1:
        labels = labels[None]
    if labels.shape != pred.mask.shape:
        raise ValueError(f"labels shape {tuple(labels.shape)} != predictions {tuple(pred.mask.shape)}")
    logp = torch.clamp(pred.log_probs(), min=math.log(eps))
    nll = -logp.gather(-1, labels.clamp(min=0)[..., None])[..., 0]
    m = pred.mask.to(nll.dtype)
    per_utt = (nll * m).sum(dim=1) / m.sum(dim=1)
    return per_utt.mean()


def duration_mse(pred: DurationPrediction, target) -> torch.Tensor:
    """Mean squared error between log target frame counts and predicted log durations."""
    target = torch.as_tensor(target)
    if target.dim() == 1:
        target = target[None]
    if target.shape != pred.mask.shape:
        raise ValueError(f"target shape {tuple(target.shape)} != predictions {tuple(pred.mask.shape)}")
    if bool((target[pred.mask] <= 0).any()):
        raise DurationDomainError("duration targets must be >= 1 frame")
    log_t = torch.log(torch.where(pred.mask, target, torch.ones_like(target)).to(pred.log_durations.dtype))
    m = pred.mask.to(log_t.dtype)
    per_utt = ((log_t - pred.log_durations) ** 2 * m).sum(dim=1) / m.sum(dim=1)
    return per_utt.mean()
