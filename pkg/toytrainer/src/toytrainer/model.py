"""In-context detection model: log-mel front end, small CNN encoder, label
encoding added to support frames, transformer with rotary position encoding,
and a per-frame detection head at 50 Hz.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ToyModelConfig


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   fmax: float | None = None) -> np.ndarray:
    fmax = fmax or sample_rate / 2.0
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)
    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / max(center - lo, 1e-9)
        falling = (hi - freqs) / max(hi - center, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


class LogMelFrontend(nn.Module):
    """Waveform [B, n] -> log-mel frames [B, floor(n/hop), n_mels]."""

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        self.hop = cfg.hop
        self.win = cfg.win
        self.n_fft = cfg.n_fft
        window = torch.hann_window(cfg.win, dtype=torch.float64)
        self.register_buffer("window", window, persistent=False)
        fb = torch.from_numpy(mel_filterbank(cfg.n_mels, cfg.n_fft,
                                             cfg.sample_rate))
        self.register_buffer("mel_fb", fb, persistent=False)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        b, n = wave.shape
        count = n // self.hop
        pad = self.win // 2 - self.hop // 2
        padded = F.pad(wave, (pad, self.win))
        frames = padded.unfold(1, self.win, self.hop)[:, :count]
        frames = frames * self.window.to(frames.dtype)
        spec = torch.fft.rfft(frames, n=self.n_fft, dim=-1)
        power = spec.real.square() + spec.imag.square()
        mel = power @ self.mel_fb.to(power.dtype).T
        return torch.log(mel + 1e-10)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.norm1 = nn.GroupNorm(4, channels)
        self.norm2 = nn.GroupNorm(4, channels)

    def forward(self, x):
        y = F.gelu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.gelu(x + y)


class SpectrogramEncoder(nn.Module):
    """[B, T100, M] -> [B, T50, hidden]: conv block + two residual blocks,
    frequency mean-pool k2 after each, flatten, project, temporal pool."""

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        c = cfg.cnn_channels
        self.conv_in = nn.Conv2d(1, c, 7, padding=3)
        self.norm_in = nn.GroupNorm(4, c)
        self.res1 = ResidualBlock(c)
        self.res2 = ResidualBlock(c)
        freq_out = cfg.n_mels // 8  # three k2 pools
        self.proj = nn.Linear(c * freq_out, cfg.hidden)
        self.temporal_pool = cfg.temporal_pool

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = mel.unsqueeze(1)                      # [B, 1, T, M]
        x = F.gelu(self.norm_in(self.conv_in(x)))
        x = F.avg_pool2d(x, (1, 2))
        x = self.res1(x)
        x = F.avg_pool2d(x, (1, 2))
        x = self.res2(x)
        x = F.avg_pool2d(x, (1, 2))               # [B, C, T, M/8]
        x = x.permute(0, 2, 1, 3).flatten(2)      # [B, T, C*M/8]
        x = self.proj(x)
        t50 = x.shape[1] // self.temporal_pool
        x = x[:, : t50 * self.temporal_pool]
        x = x.reshape(x.shape[0], t50, self.temporal_pool, -1).mean(dim=2)
        return x


def rope_angles(seq_len: int, head_dim: int, device, dtype):
    half = head_dim // 2
    inv_freq = 1.0 / (10000.0 ** (torch.arange(half, device=device,
                                               dtype=torch.float64) / half))
    t = torch.arange(seq_len, device=device, dtype=torch.float64)
    ang = torch.outer(t, inv_freq)
    return ang.cos().to(dtype), ang.sin().to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor):
    """x: [B, heads, T, head_dim]; rotate feature pairs by position."""
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class RotaryAttention(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)

    def forward(self, x):
        b, t, h = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
        cos, sin = rope_angles(t, self.head_dim, x.device, x.dtype)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        y = F.scaled_dot_product_attention(q, k, v)
        y = y.transpose(1, 2).reshape(b, t, h)
        return self.out(y)


class TransformerLayer(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.attn = RotaryAttention(hidden, heads)
        self.mlp = nn.Sequential(nn.Linear(hidden, 4 * hidden), nn.GELU(),
                                 nn.Linear(4 * hidden, hidden))
        self.norm1 = nn.LayerNorm(hidden)
        self.norm2 = nn.LayerNorm(hidden)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class InContextDetector(nn.Module):
    """Per-frame event logits for a query, conditioned on labeled support."""

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        effective_rate = cfg.sample_rate / (cfg.hop * cfg.temporal_pool)
        if abs(effective_rate - cfg.frame_rate) > 1e-9:
            raise ValueError(
                f"config yields {effective_rate} Hz output frames, "
                f"expected {cfg.frame_rate} Hz"
            )
        self.cfg = cfg
        self.frontend = LogMelFrontend(cfg)
        self.encoder = SpectrogramEncoder(cfg)
        self.label_embed = nn.Embedding(2, cfg.hidden)
        self.layers = nn.ModuleList(
            TransformerLayer(cfg.hidden, cfg.heads) for _ in range(cfg.depth))
        self.final_norm = nn.LayerNorm(cfg.hidden)
        self.head = nn.Linear(cfg.hidden, 1)

    def forward(self, support_wave: torch.Tensor, support_mask: torch.Tensor,
                query_wave: torch.Tensor) -> torch.Tensor:
        """support_wave [B, ns], support_mask [B, Ts@50Hz] in {0,1},
        query_wave [B, nq] -> logits [B, Ts+Tq] (query = last Tq frames)."""
        wave = torch.cat([support_wave, query_wave], dim=1)
        mel = self.frontend(wave)
        x = self.encoder(mel)
        t_s = support_wave.shape[1] // (self.cfg.hop * self.cfg.temporal_pool)
        mask = support_mask[:, :t_s].long()
        label = self.label_embed(mask)
        x = torch.cat([x[:, :t_s] + label, x[:, t_s:]], dim=1)
        for layer in self.layers:
            x = layer(x)
        return self.head(self.final_norm(x)).squeeze(-1)

    def query_probs(self, support_wave, support_mask, query_wave):
        logits = self.forward(support_wave, support_mask, query_wave)
        t_q = query_wave.shape[1] // (self.cfg.hop * self.cfg.temporal_pool)
        return torch.sigmoid(logits[:, -t_q:])


def build_model(cfg: ToyModelConfig) -> InContextDetector:
    torch.manual_seed(cfg.seed)
    return InContextDetector(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
