"""Conditioning feature for the denoising decoder.

The timestep embedding is split into a visual and a motion query seed. Each
seed biases the queries of an attention pass over its stream: the fused
visual features on one side, the (projected) correlation lookup features on
the other. A learned gate in (0, 1) then mixes the two attention outputs
elementwise, so the result always lies between them.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .diffusion import TimeEmbedder
from .errors import ConfigError
from .fusion import scaled_dot_attention


class ConditioningFeature(NamedTuple):
    x_tvm: torch.Tensor  # (B, C, H, W)
    gate: torch.Tensor  # broadcastable to x_tvm, values in (0, 1)
    visual: torch.Tensor  # attention output over the visual stream
    motion: torch.Tensor  # attention output over the motion stream


class _SeededAttention(nn.Module):
    """Self-attention over one stream whose queries carry a time-derived seed."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)

    def forward(self, tokens: torch.Tensor, seed: torch.Tensor) -> torch.Tensor:
        b, n, c = tokens.shape
        d = c // self.heads

        def split(x):
            return x.reshape(b, n, self.heads, d).transpose(1, 2)

        q = split(self.q_proj(tokens) + seed[:, None, :])
        k = split(self.k_proj(tokens))
        v = split(self.v_proj(tokens))
        out, _ = scaled_dot_attention(q, k, v)
        return out.transpose(1, 2).reshape(b, n, c)


class TimeVisualMotionConditioner(nn.Module):
    def __init__(self, channels: int, lookup_channels: int,
                 time_dim: int = 128, heads: int = 4,
                 gate_per_pixel: bool = False):
        super().__init__()
        self.channels = channels
        self.time_embed = TimeEmbedder(time_dim)
        self.motion_proj = nn.Sequential(
            nn.Conv2d(lookup_channels, channels, 1), nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1))
        self.visual_query_seed = nn.Linear(time_dim, channels)
        self.motion_query_seed = nn.Linear(time_dim, channels)
        self.visual_attn = _SeededAttention(channels, heads)
        self.motion_attn = _SeededAttention(channels, heads)
        self.gate_per_pixel = gate_per_pixel
        if gate_per_pixel:
            self.gate_mlp = nn.Sequential(
                nn.Conv2d(2 * channels, channels, 1), nn.ReLU(inplace=True),
                nn.Conv2d(channels, channels, 1))
        else:
            self.gate_mlp = nn.Sequential(
                nn.Linear(2 * channels, channels), nn.ReLU(inplace=True),
                nn.Linear(channels, channels))

    def split_time_queries(self, e_t: torch.Tensor):
        return self.visual_query_seed(e_t), self.motion_query_seed(e_t)

    def condition(self, e_t: torch.Tensor, x_fusion: torch.Tensor,
                  motion_feat: torch.Tensor,
                  gate_override: torch.Tensor | float | None = None
                  ) -> ConditioningFeature:
        """Build the conditioning feature from an already-embedded timestep,
        the fused visual map, and C-channel motion features."""
        if motion_feat.shape != x_fusion.shape:
            raise ConfigError(
                f"motion features {tuple(motion_feat.shape)} must match "
                f"visual features {tuple(x_fusion.shape)}")
        b, c, h, w = x_fusion.shape
        if e_t.ndim == 1:
            e_t = e_t[None].expand(b, -1)
        seed_v, seed_m = self.split_time_queries(e_t)

        vis_tokens = x_fusion.reshape(b, c, h * w).transpose(1, 2)
        mot_tokens = motion_feat.reshape(b, c, h * w).transpose(1, 2)
        a_v = self.visual_attn(vis_tokens, seed_v).transpose(1, 2).reshape(b, c, h, w)
        a_m = self.motion_attn(mot_tokens, seed_m).transpose(1, 2).reshape(b, c, h, w)

        if gate_override is not None:
            gate = torch.as_tensor(gate_override, dtype=a_v.dtype,
                                   device=a_v.device)
        elif self.gate_per_pixel:
            gate = torch.sigmoid(self.gate_mlp(torch.cat([a_v, a_m], dim=1)))
        else:
            pooled = torch.cat([a_v.mean(dim=(2, 3)), a_m.mean(dim=(2, 3))],
                               dim=1)
            gate = torch.sigmoid(self.gate_mlp(pooled))[:, :, None, None]
        x_tvm = gate * a_v + (1.0 - gate) * a_m
        return ConditioningFeature(x_tvm, gate, a_v, a_m)

    def forward(self, t, x_fusion: torch.Tensor, lookup_feat: torch.Tensor,
                gate_override=None) -> ConditioningFeature:
        """Embed timestep t, project raw lookup features, and condition."""
        e_t = self.time_embed(t)
        return self.condition(e_t, x_fusion, self.motion_proj(lookup_feat),
                              gate_override=gate_override)
