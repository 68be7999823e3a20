"""Global style tokens and the vector-quantized local style encoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F


@dataclass
class StyleConfig:
    n_mels: int = 80
    ref_channels: int = 64
    n_tokens: int = 8
    n_heads: int = 4
    global_dim: int = 64
    local_dim: int = 32
    codebook_size: int = 64
    downsample: int = 4
    align_dim: int = 32
    commitment: float = 0.25


@dataclass
class LocalStyle:
    frames: torch.Tensor  # (B, F, H) quantized rows (straight-through)
    mask: torch.Tensor  # (B, F)
    indices: torch.Tensor  # (B, F)
    pre_quant: torch.Tensor | None = None


def masked_mean(x, mask):
    m = mask[..., None].to(x.dtype)
    return (x * m).sum(dim=1) / m.sum(dim=1).clamp(min=1)


def vq_quantize(z, codebook):
    """Nearest codebook entry by squared Euclidean distance; ties go to the lowest index.

    ``z`` is (..., H), ``codebook`` is (C, H). Returns (quantized, indices); the
    quantized tensor carries no gradient, see :func:`straight_through`.
    """
    z = torch.as_tensor(z)
    codebook = torch.as_tensor(codebook, dtype=z.dtype)
    if z.shape[-1] != codebook.shape[-1]:
        raise ValueError(f"dimension mismatch: z has {z.shape[-1]}, codebook has {codebook.shape[-1]}")
    flat = z.reshape(-1, z.shape[-1])
    with torch.no_grad():
        dist = ((flat[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
        # argmin returns the first minimum
        idx = torch.argmin(dist, dim=1)
    q = codebook[idx].reshape(z.shape)
    return q, idx.reshape(z.shape[:-1])


def straight_through(z, q):
    """Forward value ``q`` (bit-exact), gradient passed to ``z`` unchanged."""
    return q.detach() + (z - z.detach())


def vq_losses(z, q, mask, commitment):
    m = mask[..., None].to(z.dtype)
    denom = m.sum() * z.shape[-1]
    codebook_loss = (((z.detach() - q) ** 2) * m).sum() / denom
    commit_loss = (((z - q.detach()) ** 2) * m).sum() / denom
    return codebook_loss + commitment * commit_loss


class ReferenceEncoder(nn.Module):
    def __init__(self, n_mels, channels):
        super().__init__()
        self.conv1 = nn.Conv1d(n_mels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)

    def forward(self, mel, mask):
        m = mask[:, None, :].to(mel.dtype)
        h = F.relu(self.conv1(mel.transpose(1, 2) * m)) * m
        h = F.relu(self.conv2(h)) * m
        return masked_mean(h.transpose(1, 2), mask)


class GlobalStyleTokens(nn.Module):
    """Multi-head attention from a reference summary over a bank of learned tokens."""

    def __init__(self, cfg: StyleConfig):
        super().__init__()
        if cfg.global_dim % cfg.n_heads:
            raise ValueError("global_dim must be divisible by n_heads")
        self.n_heads = cfg.n_heads
        self.reference = ReferenceEncoder(cfg.n_mels, cfg.ref_channels)
        self.tokens = nn.Parameter(0.5 * torch.randn(cfg.n_tokens, cfg.global_dim))
        self.query = nn.Linear(cfg.ref_channels, cfg.global_dim)
        self.key = nn.Linear(cfg.global_dim, cfg.global_dim)

    def attention(self, mel, mask):
        """Per-head token weights, shape (B, heads, n_tokens)."""
        b = mel.shape[0]
        hd = self.tokens.shape[1] // self.n_heads
        q = self.query(self.reference(mel, mask)).reshape(b, self.n_heads, hd)
        k = self.key(self.tokens).reshape(-1, self.n_heads, hd)
        scores = torch.einsum("bhd,nhd->bhn", q, k) / hd**0.5
        return torch.softmax(scores, dim=-1)

    def forward(self, mel, mask):
        weights = self.attention(mel, mask)
        hd = self.tokens.shape[1] // self.n_heads
        values = self.tokens.reshape(-1, self.n_heads, hd)
        out = torch.einsum("bhn,nhd->bhd", weights, values)
        return out.reshape(mel.shape[0], -1)


class LocalStyleEncoder(nn.Module):
    def __init__(self, cfg: StyleConfig):
        super().__init__()
        self.downsample = cfg.downsample
        self.commitment = cfg.commitment
        self.conv1 = nn.Conv1d(cfg.n_mels, cfg.local_dim, 3, padding=1)
        self.conv2 = nn.Conv1d(cfg.local_dim, cfg.local_dim, 3, padding=1)
        self.codebook = nn.Parameter(torch.randn(cfg.codebook_size, cfg.local_dim))

    def pre_quantize(self, mel, mask):
        m = mask[:, None, :].to(mel.dtype)
        h = F.relu(self.conv1(mel.transpose(1, 2) * m)) * m
        h = self.conv2(h) * m
        # average over valid frames within each block of `downsample` frames
        ds = self.downsample
        extra = (-h.shape[-1]) % ds
        h = F.pad(h, (0, extra))
        m = F.pad(m, (0, extra))
        total = h.reshape(h.shape[0], h.shape[1], -1, ds).sum(-1)
        count = m.reshape(m.shape[0], 1, -1, ds).sum(-1)
        pooled = total / count.clamp(min=1)
        lengths = (mask.sum(dim=1) + self.downsample - 1) // self.downsample
        out_mask = torch.arange(pooled.shape[-1])[None, :] < lengths[:, None]
        return pooled.transpose(1, 2), out_mask

    def forward(self, mel, mask):
        z, out_mask = self.pre_quantize(mel, mask)
        q, idx = vq_quantize(z, self.codebook)
        loss = vq_losses(z, q, out_mask, self.commitment)
        style = LocalStyle(straight_through(z, q) * out_mask[..., None], out_mask, idx * out_mask, z)
        return style, loss


class LocalStyleAligner(nn.Module):
    """Attention from encoder states (queries) to quantized style rows (keys/values)."""

    def __init__(self, hidden_dim, local_dim, align_dim):
        super().__init__()
        self.query = nn.Linear(hidden_dim, align_dim)
        self.key = nn.Linear(local_dim, align_dim)
        self.scale = align_dim**-0.5

    def weights(self, style: LocalStyle, hidden, hidden_mask):
        scores = torch.einsum("bla,bfa->blf", self.query(hidden), self.key(style.frames)) * self.scale
        scores = scores.masked_fill(~style.mask[:, None, :], float("-inf"))
        return torch.softmax(scores, dim=-1) * hidden_mask[..., None]

    def forward(self, style: LocalStyle, hidden, hidden_mask):
        attn = self.weights(style, hidden, hidden_mask)
        return attn @ style.frames


class StyleModule(nn.Module):
    def __init__(self, cfg: StyleConfig, hidden_dim: int):
        super().__init__()
        self.cfg = cfg
        self.gst = GlobalStyleTokens(cfg)
        self.local = LocalStyleEncoder(cfg)
        self.aligner = LocalStyleAligner(hidden_dim, cfg.local_dim, cfg.align_dim)

    def global_style(self, mel, mask):
        return self.gst(mel, mask)

    def local_style_encode(self, mel, mask):
        return self.local(mel, mask)

    def align_local_style(self, style: LocalStyle, hidden, hidden_mask):
        return self.aligner(style, hidden, hidden_mask)


class SpeakerStyleCache:
    """Per-speaker running means of the global style and local codebook-usage histograms."""

    def __init__(self, n_speakers: int, global_dim: int, codebook_size: int):
        self.global_sum = torch.zeros(n_speakers, global_dim, dtype=torch.float64)
        self.counts = torch.zeros(n_speakers, dtype=torch.float64)
        self.histogram = torch.zeros(n_speakers, codebook_size, dtype=torch.float64)

    def update(self, speakers, global_style, indices, mask):
        for b, spk in enumerate(speakers.tolist()):
            self.global_sum[spk] += global_style[b].detach().double()
            self.counts[spk] += 1
            used = indices[b][mask[b]]
            self.histogram[spk] += torch.bincount(used, minlength=self.histogram.shape[1]).double()

    def has(self, speaker: int) -> bool:
        return 0 <= speaker < self.counts.shape[0] and bool(self.counts[speaker] > 0)

    def global_mean(self, speaker: int) -> torch.Tensor:
        return self.global_sum[speaker] / self.counts[speaker]

    def local_mean(self, speaker: int, codebook: torch.Tensor) -> torch.Tensor:
        """Histogram-weighted average codebook vector, used as a single style row."""
        h = self.histogram[speaker]
        return (h / h.sum()) @ codebook.detach().double()

    def state(self) -> dict:
        return {"global_sum": self.global_sum, "counts": self.counts, "histogram": self.histogram}

    def load(self, state: dict) -> None:
        self.global_sum = state["global_sum"].double()
        self.counts = state["counts"].double()
        self.histogram = state["histogram"].double()
