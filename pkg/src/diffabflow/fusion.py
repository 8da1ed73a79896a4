"""Fusion of frame and event features.

The attention strategy cross-attends appearance features (frame queries,
event keys/values) and boundary features separately, then fuses the two
streams with one self-attention pass over their combined token set. Tokens
are flattened spatial positions; there is no positional encoding, so the
stage is equivariant to consistent spatial permutations of its inputs.
Cheaper baselines (channel concatenation, learned scalar-gated sum) share
the same interface so they can be swapped from configuration alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError

FUSION_STRATEGIES = ("attention", "concat", "weighted")


@dataclass
class AttentionConfig:
    heads: int = 4
    head_dim: int = 32
    dropout: float = 0.0

    @property
    def channels(self) -> int:
        return self.heads * self.head_dim

    def validate(self, channels: int) -> None:
        if self.heads < 1:
            raise ConfigError("attention heads must be >= 1")
        if self.heads * self.head_dim != channels:
            raise ConfigError(
                f"heads * head_dim = {self.heads * self.head_dim} "
                f"must equal channel count {channels}")


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor):
    """softmax(q k^T / sqrt(d)) v over the last two dims.

    Shapes: q (..., N_q, d), k/v (..., N_kv, d). Returns (output, weights);
    weight rows sum to 1.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, channels: int, cfg: AttentionConfig):
        super().__init__()
        cfg.validate(channels)
        self.cfg = cfg
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)
        self.drop = nn.Dropout(cfg.dropout)

    def _split(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.cfg.heads, self.cfg.head_dim).transpose(1, 2)

    def forward(self, query, kv):
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(kv))
        v = self._split(self.v_proj(kv))
        out, _ = scaled_dot_attention(q, k, v)
        b, _, n, _ = out.shape
        out = out.transpose(1, 2).reshape(b, n, -1)
        return self.drop(self.out_proj(out))


class AttentionBlock(nn.Module):
    """Pre-norm attention + feed-forward, both residual."""

    def __init__(self, channels: int, cfg: AttentionConfig, ffn_mult: int = 2):
        super().__init__()
        self.norm_q = nn.LayerNorm(channels)
        self.norm_kv = nn.LayerNorm(channels)
        self.attn = MultiHeadAttention(channels, cfg)
        self.norm_ffn = nn.LayerNorm(channels)
        self.ffn = nn.Sequential(nn.Linear(channels, ffn_mult * channels),
                                 nn.GELU(),
                                 nn.Linear(ffn_mult * channels, channels))

    def forward(self, query, kv=None):
        kv = query if kv is None else kv
        x = query + self.attn(self.norm_q(query), self.norm_kv(kv))
        return x + self.ffn(self.norm_ffn(x))


def _to_tokens(x: torch.Tensor) -> torch.Tensor:
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)


def _to_map(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    b, n, c = tokens.shape
    return tokens.transpose(1, 2).reshape(b, c, h, w)


def cross_attend(block: AttentionBlock, query_src: torch.Tensor,
                 kv_src: torch.Tensor) -> torch.Tensor:
    """Apply an attention block to two feature maps; output keeps the
    query map's shape."""
    if query_src.shape[1] != kv_src.shape[1]:
        raise ConfigError("channel counts of query and key/value maps differ")
    h, w = query_src.shape[-2:]
    return _to_map(block(_to_tokens(query_src), _to_tokens(kv_src)), h, w)


class AppearanceBoundaryFusion(nn.Module):
    """Fuses per-instant frame and event features into one map.

    forward() takes the raw encoder features plus their appearance/boundary
    extractor outputs; which of them are used depends on the strategy.
    """

    def __init__(self, channels: int, strategy: str = "attention",
                 attention: AttentionConfig | None = None):
        super().__init__()
        if strategy not in FUSION_STRATEGIES:
            raise ConfigError(f"unknown fusion strategy {strategy!r}")
        self.strategy = strategy
        self.channels = channels
        if strategy == "attention":
            cfg = attention or AttentionConfig(
                heads=4, head_dim=channels // 4)
            self.appear_attn = AttentionBlock(channels, cfg)
            self.bound_attn = AttentionBlock(channels, cfg)
            self.merge_attn = AttentionBlock(channels, cfg)
            self.stream_embed = nn.Parameter(torch.zeros(2, channels))
            self.out_proj = nn.Conv2d(channels, channels, 1)
        elif strategy == "concat":
            self.proj = nn.Conv2d(2 * channels, channels, 1)
        else:
            self.gate = nn.Parameter(torch.zeros(()))
            self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x_f, x_e, x_fa=None, x_fb=None, x_ea=None, x_eb=None,
                gate_override: float | None = None) -> torch.Tensor:
        if self.strategy == "concat":
            return self.proj(torch.cat([x_f, x_e], dim=1))
        if self.strategy == "weighted":
            g = torch.sigmoid(self.gate) if gate_override is None \
                else torch.as_tensor(float(gate_override))
            return self.proj(g * x_f + (1.0 - g) * x_e)

        if any(m is None for m in (x_fa, x_fb, x_ea, x_eb)):
            raise ConfigError("attention fusion needs all four "
                              "appearance/boundary feature maps")
        h, w = x_f.shape[-2:]
        appear = cross_attend(self.appear_attn, x_fa, x_ea)
        bound = cross_attend(self.bound_attn, x_fb, x_eb)
        tokens = torch.cat([
            _to_tokens(appear) + self.stream_embed[0],
            _to_tokens(bound) + self.stream_embed[1],
        ], dim=1)
        fused = self.merge_attn(tokens)
        n = h * w
        merged = 0.5 * (fused[:, :n] + fused[:, n:])
        return self.out_proj(_to_map(merged, h, w))
