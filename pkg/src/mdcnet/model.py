"""Noise-prediction network.

Tokens are DCT-coefficient rows (L tokens x n_feats). They are embedded to
``latent_dim``, summed with a learned positional embedding and the diffusion
step embedding, and run through ``n_blocks`` gated transformer blocks. Block
``i`` and block ``n_blocks - 1 - i`` are joined by an additive skip connection.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

# ff_dim of the default 4-block model; chosen so parameter_count lands on ~16.84M
DEFAULT_FF_DIM = 2668


@dataclass
class ModelConfig:
    n_frames: int = 125
    n_feats: int = 51
    n_blocks: int = 4
    latent_dim: int = 512
    n_heads: int = 8
    ff_dim: int = DEFAULT_FF_DIM
    dropout: float = 0.1
    use_gate: bool = True
    multiscale_time: bool = True
    n_time_scales: int = 4

    def __post_init__(self):
        if self.n_blocks < 2 or self.n_blocks % 2:
            raise ConfigError(f"n_blocks must be even and >= 2, got {self.n_blocks}")
        if self.latent_dim % self.n_heads:
            raise ConfigError(
                f"latent_dim {self.latent_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.latent_dim % 2:
            raise ConfigError("latent_dim must be even for sinusoidal embeddings")
        if self.multiscale_time and (self.latent_dim // 2) % self.n_time_scales:
            raise ConfigError(
                f"latent_dim/2 = {self.latent_dim // 2} not divisible by n_time_scales "
                f"{self.n_time_scales}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def sinusoid_features(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """[cos(t*w_0..), sin(t*w_0..)] with frequencies w_i geometric from 1 to 1/max_period."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def _band_columns(dim: int, n_bands: int) -> list[torch.Tensor]:
    """Column indices of each frequency band (fast to slow) in the sinusoid layout."""
    half = dim // 2
    size = half // n_bands
    return [
        torch.cat([torch.arange(b * size, (b + 1) * size), half + torch.arange(b * size, (b + 1) * size)])
        for b in range(n_bands)
    ]


class TimeEmbedding(nn.Module):
    """Diffusion-step embedding.

    With ``multiscale`` each frequency band of the sinusoid features gets its
    own projection and the bands are mixed with learned softmax weights;
    otherwise the whole sinusoid vector goes through one projection.
    """

    def __init__(self, latent_dim: int, multiscale: bool = True, n_scales: int = 4):
        super().__init__()
        self.latent_dim = latent_dim
        self.multiscale = multiscale
        if multiscale:
            self.bands = _band_columns(latent_dim, n_scales)
            self.band_proj = nn.ModuleList(
                nn.Linear(len(cols), latent_dim) for cols in self.bands
            )
            self.scale_logits = nn.Parameter(torch.zeros(n_scales))
        else:
            self.proj_in = nn.Linear(latent_dim, latent_dim)
        self.proj_out = nn.Linear(latent_dim, latent_dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.proj_out.weight.dtype
        raw = sinusoid_features(t, self.latent_dim).to(dtype)
        if self.multiscale:
            w = torch.softmax(self.scale_logits, dim=0)
            h = sum(w[i] * proj(raw[:, cols]) for i, (cols, proj) in enumerate(zip(self.bands, self.band_proj)))
        else:
            h = self.proj_in(raw)
        return self.proj_out(F.silu(h))


def gate_combine(attn_out, ffn_out, gate_in, gate: nn.Linear):
    """bias * ffn_out + (1 - bias) * attn_out with bias = sigmoid(gate(gate_in))."""
    if not (attn_out.shape == ffn_out.shape == gate_in.shape):
        raise ShapeError(
            f"gate inputs disagree: {tuple(attn_out.shape)}, {tuple(ffn_out.shape)}, "
            f"{tuple(gate_in.shape)}"
        )
    bias = torch.sigmoid(gate(gate_in))
    return bias * ffn_out + (1.0 - bias) * attn_out


class GatedBlock(nn.Module):
    def __init__(self, latent_dim, n_heads, ff_dim, dropout, use_gate=True):
        super().__init__()
        self.norm1 = nn.LayerNorm(latent_dim)
        self.attn = nn.MultiheadAttention(latent_dim, n_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(latent_dim)
        self.ffn = nn.Sequential(
            nn.Linear(latent_dim, ff_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ff_dim, latent_dim),
        )
        self.drop = nn.Dropout(dropout)
        self.gate = nn.Linear(latent_dim, latent_dim) if use_gate else None

    def forward(self, x):
        h = self.norm1(x)
        a = x + self.drop(self.attn(h, h, h, need_weights=False)[0])
        f = a + self.drop(self.ffn(self.norm2(a)))
        if self.gate is None:
            return f
        return gate_combine(a, f, x, self.gate)


class Denoiser(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.input_proj = nn.Linear(c.n_feats, c.latent_dim)
        self.pos_embed = nn.Parameter(torch.randn(c.n_frames, c.latent_dim) * 0.02)
        self.time_embed = TimeEmbedding(c.latent_dim, c.multiscale_time, c.n_time_scales)
        self.blocks = nn.ModuleList(
            GatedBlock(c.latent_dim, c.n_heads, c.ff_dim, c.dropout, c.use_gate)
            for _ in range(c.n_blocks)
        )
        self.final_norm = nn.LayerNorm(c.latent_dim)
        self.output_proj = nn.Linear(c.latent_dim, c.n_feats)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """x: (B, L, n_feats) noisy coefficients; t: (B,) integer steps."""
        c = self.config
        if x.ndim != 3 or x.shape[-1] != c.n_feats or not 1 <= x.shape[1] <= c.n_frames:
            raise ShapeError(
                f"expected (batch, L<={c.n_frames}, {c.n_feats}) input, got {tuple(x.shape)}"
            )
        t = torch.as_tensor(t, device=x.device).reshape(-1)
        if t.numel() == 1:
            t = t.expand(x.shape[0])
        if t.shape[0] != x.shape[0]:
            raise ShapeError(f"{t.shape[0]} steps for a batch of {x.shape[0]}")
        h = self.input_proj(x) + self.pos_embed[: x.shape[1]]
        h = h + self.time_embed(t)[:, None, :]
        n_half = c.n_blocks // 2
        skips = []
        for i, block in enumerate(self.blocks):
            if i >= n_half:
                h = h + skips.pop()
            h = block(h)
            if i < n_half:
                skips.append(h)
        return self.output_proj(self.final_norm(h))


def parameter_count(config: ModelConfig) -> int:
    """Number of learnable scalars of ``Denoiser(config)``, computed from the layer sizes."""
    D, Fd, ff = config.latent_dim, config.n_feats, config.ff_dim
    linear = lambda i, o: i * o + o  # noqa: E731
    n = linear(Fd, D) + config.n_frames * D
    if config.multiscale_time:
        band = D // config.n_time_scales
        n += config.n_time_scales * linear(band, D) + config.n_time_scales
    else:
        n += linear(D, D)
    n += linear(D, D)
    block = 2 * D + (4 * D * D + 4 * D) + 2 * D + linear(D, ff) + linear(ff, D)
    if config.use_gate:
        block += linear(D, D)
    n += config.n_blocks * block
    n += 2 * D + linear(D, Fd)
    return n
