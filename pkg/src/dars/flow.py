"""Conditional mean construction, OT conditional flow matching and Euler sampling."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F


class NonFiniteFieldError(FloatingPointError):
    """The vector field produced NaN or inf during sampling."""


@dataclass
class OtCfmConfig:
    sigma_min: float = 1e-4
    n_euler_steps: int = 10

    def __post_init__(self):
        if not 0.0 < self.sigma_min < 1.0:
            raise ValueError("sigma_min must lie in (0, 1)")
        if self.n_euler_steps < 1:
            raise ValueError("n_euler_steps must be >= 1")


@dataclass
class FlowConfig:
    n_mels: int = 80
    fuse_dim: int = 96
    speaker_dim: int = 16
    channels: tuple[int, int] = (32, 64)
    time_dim: int = 32
    activation: str = "silu"


# ---------------------------------------------------------------- conditional mean


def upsample(hidden, durations, mask):
    """Repeat row i of each sequence ``durations[i]`` times; returns (frames, frame_mask)."""
    durations = torch.as_tensor(durations, dtype=torch.long)
    if bool((durations[mask] < 1).any()):
        warnings.warn("durations below one frame were clamped to 1", stacklevel=2)
        durations = torch.where(mask, durations.clamp(min=1), durations)
    seqs = []
    for b in range(hidden.shape[0]):
        valid = mask[b]
        seqs.append(torch.repeat_interleave(hidden[b, valid], durations[b, valid], dim=0))
    lengths = [s.shape[0] for s in seqs]
    out = nn.utils.rnn.pad_sequence(seqs, batch_first=True)
    frame_mask = torch.arange(out.shape[1])[None, :] < torch.tensor(lengths)[:, None]
    return out, frame_mask


class ConditionalMean(nn.Module):
    """Fuses encoder states with global/local style and speaker identity, then upsamples."""

    def __init__(self, hidden_dim, global_dim, local_dim, n_speakers, cfg: FlowConfig):
        super().__init__()
        self.global_dim = global_dim
        self.local_dim = local_dim
        self.speaker = nn.Embedding(max(n_speakers, 1), cfg.speaker_dim)
        self.fuse = nn.Linear(hidden_dim + global_dim + local_dim + cfg.speaker_dim, cfg.fuse_dim)
        self.proj = nn.Linear(cfg.fuse_dim, cfg.n_mels)

    def fused(self, hidden, mask, global_style=None, local_style=None, speakers=None):
        b, length, _ = hidden.shape
        if global_style is None:
            global_style = hidden.new_zeros(b, self.global_dim)
        if local_style is None:
            local_style = hidden.new_zeros(b, length, self.local_dim)
        if speakers is None:
            speakers = torch.zeros(b, dtype=torch.long)
        spk = self.speaker(torch.as_tensor(speakers, dtype=torch.long).reshape(-1))
        cond = torch.cat(
            [
                hidden,
                global_style[:, None, :].expand(b, length, -1),
                local_style,
                spk[:, None, :].expand(b, length, -1),
            ],
            dim=-1,
        )
        return torch.tanh(self.fuse(cond)) * mask[..., None]

    def forward(self, hidden, mask, durations, global_style=None, local_style=None, speakers=None):
        fused = self.fused(hidden, mask, global_style, local_style, speakers)
        frames, frame_mask = upsample(fused, durations, mask)
        return self.proj(frames) * frame_mask[..., None], frame_mask


# ---------------------------------------------------------------- OT-CFM


def ot_cfm_pair(x0, x1, t, sigma_min: float):
    """Point on the straight noise-to-data path and its (constant) target velocity."""
    x0 = torch.as_tensor(x0)
    x1 = torch.as_tensor(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    t = torch.as_tensor(t, dtype=x0.dtype)
    if t.dim() > 0:
        t = t.reshape(-1, *([1] * (x0.dim() - 1)))
    x_t = (1 - (1 - sigma_min) * t) * x0 + t * x1
    u_t = x1 - (1 - sigma_min) * x0
    return x_t, u_t


def cfm_loss(field, mu, x1, mask, cfg: OtCfmConfig, t=None, x0=None, generator=None):
    """Masked mean squared error between the field and the OT-CFM target velocity.

    ``t`` (B,) and ``x0`` (B, T, D) are sampled when not supplied.
    """
    b = x1.shape[0]
    if t is None:
        t = torch.rand(b, dtype=x1.dtype, generator=generator)
    if x0 is None:
        x0 = torch.randn(x1.shape, dtype=x1.dtype, generator=generator)
    x_t, u_t = ot_cfm_pair(x0, x1, t, cfg.sigma_min)
    v = field(x_t, mu, t, mask)
    m = mask[..., None].to(x1.dtype)
    return (((v - u_t) ** 2) * m).sum() / (m.sum() * x1.shape[-1])


@torch.no_grad()
def euler_sample(field, mu, mask, n_steps: int, seed: int | None = None, x0=None, temperature: float = 1.0):
    """Integrate dx/dt = v(x | mu; t) from t=0 to 1 with ``n_steps`` forward Euler steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if x0 is None:
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        x0 = temperature * torch.randn(mu.shape, dtype=mu.dtype, generator=gen)
    x = x0.clone()
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = torch.full((x.shape[0],), k * dt, dtype=x.dtype)
        v = field(x, mu, t, mask)
        if not bool(torch.isfinite(v).all()):
            raise NonFiniteFieldError(f"non-finite field output at step {k}/{n_steps} (t={k * dt:.3f})")
        x = x + dt * v
    if mask is not None:
        x = x * mask[..., None].to(x.dtype)
    return x


# ---------------------------------------------------------------- vector fields


class SnakeBeta(nn.Module):
    """x + sin^2(alpha x) / beta with per-channel log-parameterised alpha and beta."""

    def __init__(self, channels):
        super().__init__()
        self.log_alpha = nn.Parameter(torch.zeros(channels))
        self.log_beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        alpha = self.log_alpha.exp()[None, :, None]
        beta = self.log_beta.exp()[None, :, None]
        return x + torch.sin(alpha * x) ** 2 / (beta + 1e-9)


def make_activation(name: str, channels: int) -> nn.Module:
    if name == "silu":
        return nn.SiLU()
    if name == "tanh":
        return nn.Tanh()
    if name == "snake_beta":
        return SnakeBeta(channels)
    raise ValueError(f"unknown activation {name!r}")


def timestep_embedding(t, dim, scale=1000.0):
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = scale * t[:, None] * freq[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock1d(nn.Module):
    def __init__(self, c_in, c_out, time_dim, activation):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.time = nn.Linear(time_dim, c_out)
        self.act1 = make_activation(activation, c_out)
        self.act2 = make_activation(activation, c_out)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, mask, temb):
        h = self.act1(self.conv1(x * mask)) + self.time(temb)[:, :, None]
        h = self.act2(self.conv2(h * mask))
        return (h + self.skip(x)) * mask


class UNetField(nn.Module):
    """1-D U-Net over time: two down blocks, one middle block, two up blocks."""

    def __init__(self, cfg: FlowConfig):
        super().__init__()
        c0, c1 = cfg.channels
        d = cfg.n_mels
        self.time_dim = cfg.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.down0 = ResBlock1d(2 * d, c0, cfg.time_dim, cfg.activation)
        self.pool0 = nn.Conv1d(c0, c0, 3, stride=2, padding=1)
        self.down1 = ResBlock1d(c0, c1, cfg.time_dim, cfg.activation)
        self.pool1 = nn.Conv1d(c1, c1, 3, stride=2, padding=1)
        self.mid = ResBlock1d(c1, c1, cfg.time_dim, cfg.activation)
        self.up1 = ResBlock1d(2 * c1, c1, cfg.time_dim, cfg.activation)
        self.up0 = ResBlock1d(c1 + c0, c0, cfg.time_dim, cfg.activation)
        self.out = nn.Conv1d(c0, d, 1)
        # per-channel, time-dependent gains on x and mu added to the output
        self.gain = nn.Linear(cfg.time_dim, 2 * d)
        nn.init.zeros_(self.gain.weight)
        nn.init.zeros_(self.gain.bias)

    def forward(self, x, mu, t, mask):
        t_len = x.shape[1]
        pad = (-t_len) % 4
        h = torch.cat([x, mu], dim=-1).transpose(1, 2)
        m0 = mask[:, None, :].to(x.dtype)
        if pad:
            h = F.pad(h, (0, pad))
            m0 = F.pad(m0, (0, pad))
        t = torch.as_tensor(t, dtype=x.dtype).reshape(-1).expand(x.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.time_dim))
        m1 = m0[:, :, ::2]
        m2 = m1[:, :, ::2]

        s0 = self.down0(h, m0, temb)
        s1 = self.down1(self.pool0(s0) * m1, m1, temb)
        mid = self.mid(self.pool1(s1) * m2, m2, temb)
        u1 = self.up1(torch.cat([F.interpolate(mid, scale_factor=2), s1], dim=1), m1, temb)
        u0 = self.up0(torch.cat([F.interpolate(u1, scale_factor=2), s0], dim=1), m0, temb)
        out = (self.out(u0) * m0)[:, :, :t_len].transpose(1, 2)
        gx, gmu = self.gain(temb)[:, None, :].chunk(2, dim=-1)
        return (out + gx * x + gmu * mu) * mask[..., None].to(x.dtype)


class MLPField(nn.Module):
    """Frame-wise MLP field v(x | mu; t), used for low-dimensional checks."""

    def __init__(self, dim, cond_dim, hidden=64, time_dim=16, activation=nn.SiLU):
        super().__init__()
        self.time_dim = time_dim
        self.net = nn.Sequential(
            nn.Linear(dim + cond_dim + time_dim, hidden),
            activation(),
            nn.Linear(hidden, hidden),
            activation(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x, mu, t, mask=None):
        t = torch.as_tensor(t, dtype=x.dtype).reshape(-1).expand(x.shape[0])
        temb = timestep_embedding(t, self.time_dim, scale=1.0)
        temb = temb[:, None, :].expand(x.shape[0], x.shape[1], -1)
        out = self.net(torch.cat([x, mu, temb], dim=-1))
        if mask is not None:
            out = out * mask[..., None].to(x.dtype)
        return out
