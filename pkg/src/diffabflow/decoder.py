"""Recurrent denoising decoder with a memory slot.

Each refinement step gathers correlation features at the current flow,
encodes them together with the flow itself, reads back a convex combination
of recently stored hidden states (attention over the memory slots), and runs
one gated recurrent update. The flow head emits a residual on top of the
current flow and is zero-initialized, so refinement starts from the
identity. Full-resolution flow comes from a learned convex upsampler driven
by the hidden state.

Hidden states are tanh-bounded, so they stay in (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .correlation import CostVolume, lookup
from .errors import ConfigError


@dataclass
class DecoderState:
    hidden: torch.Tensor  # (B, hidden_dim, H, W), values in (-1, 1)
    memory: list[torch.Tensor] = field(default_factory=list)  # recent last


@dataclass
class FlowEstimate:
    flow_8: torch.Tensor  # (B, 2, H/8, W/8), normalized units
    flow_full: torch.Tensor  # (B, 2, H, W), pixels


class ConvGRU(nn.Module):
    def __init__(self, hidden_dim: int, input_dim: int):
        super().__init__()
        self.convz = nn.Conv2d(hidden_dim + input_dim, hidden_dim, 3, padding=1)
        self.convr = nn.Conv2d(hidden_dim + input_dim, hidden_dim, 3, padding=1)
        self.convq = nn.Conv2d(hidden_dim + input_dim, hidden_dim, 3, padding=1)

    def forward(self, h, x):
        hx = torch.cat([h, x], dim=1)
        z = torch.sigmoid(self.convz(hx))
        r = torch.sigmoid(self.convr(hx))
        q = torch.tanh(self.convq(torch.cat([r * h, x], dim=1)))
        return (1 - z) * h + z * q


class MemoryReadout(nn.Module):
    """Attention over stored hidden states, per spatial position."""

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.q_proj = nn.Conv2d(hidden_dim, hidden_dim, 1)
        self.k_proj = nn.Conv2d(hidden_dim, hidden_dim, 1)
        self.scale = hidden_dim ** -0.5

    def forward(self, hidden: torch.Tensor,
                memory: list[torch.Tensor]) -> torch.Tensor:
        if not memory:
            return torch.zeros_like(hidden)
        q = self.q_proj(hidden)
        scores = torch.stack([(q * self.k_proj(m)).sum(dim=1) * self.scale
                              for m in memory], dim=1)  # (B, M, H, W)
        weights = torch.softmax(scores, dim=1)
        stacked = torch.stack(memory, dim=1)  # (B, M, C, H, W)
        return (weights[:, :, None] * stacked).sum(dim=1)


class MotionEncoder(nn.Module):
    """Correlation lookup + current flow -> motion features."""

    def __init__(self, lookup_channels: int, out_channels: int = 128):
        super().__init__()
        self.conv_corr1 = nn.Conv2d(lookup_channels, out_channels, 1)
        self.conv_corr2 = nn.Conv2d(out_channels, out_channels // 2, 3, padding=1)
        self.conv_flow1 = nn.Conv2d(2, out_channels // 2, 7, padding=3)
        self.conv_flow2 = nn.Conv2d(out_channels // 2, out_channels // 4, 3,
                                    padding=1)
        self.conv_out = nn.Conv2d(out_channels // 2 + out_channels // 4,
                                  out_channels - 2, 3, padding=1)

    def forward(self, corr, flow):
        c = F.relu(self.conv_corr1(corr))
        c = F.relu(self.conv_corr2(c))
        f = F.relu(self.conv_flow1(flow))
        f = F.relu(self.conv_flow2(f))
        out = F.relu(self.conv_out(torch.cat([c, f], dim=1)))
        return torch.cat([out, flow], dim=1)


def convex_upsample(flow: torch.Tensor, mask: torch.Tensor,
                    factor: int = 8) -> torch.Tensor:
    """Upsample (B, 2, H, W) flow by ``factor`` with convex 3x3 weights."""
    b, _, h, w = flow.shape
    mask = mask.reshape(b, 1, 9, factor, factor, h, w)
    mask = torch.softmax(mask, dim=2)
    up = F.unfold(flow, (3, 3), padding=1).reshape(b, 2, 9, 1, 1, h, w)
    up = (mask * up).sum(dim=2)  # (B, 2, factor, factor, H, W)
    up = up.permute(0, 1, 4, 2, 5, 3)
    return up.reshape(b, 2, factor * h, factor * w)


class MemoryGRUDecoder(nn.Module):
    def __init__(self, cond_channels: int, lookup_channels: int,
                 hidden_dim: int = 128, memory_slots: int = 4,
                 flow_scale: float = 8.0, radius: int = 3,
                 upsample_factor: int = 8):
        super().__init__()
        if memory_slots < 1:
            raise ConfigError("memory_slots must be >= 1")
        self.memory_slots = memory_slots
        self.flow_scale = flow_scale
        self.radius = radius
        self.upsample_factor = upsample_factor

        self.hidden_init = nn.Conv2d(cond_channels, hidden_dim, 3, padding=1)
        self.motion_enc = MotionEncoder(lookup_channels, hidden_dim)
        self.memory_read = MemoryReadout(hidden_dim)
        self.gru = ConvGRU(hidden_dim, cond_channels + 2 * hidden_dim)
        self.flow_head = nn.Sequential(
            nn.Conv2d(hidden_dim, 2 * hidden_dim, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * hidden_dim, 2, 3, padding=1))
        self.mask_head = nn.Sequential(
            nn.Conv2d(hidden_dim, 2 * hidden_dim, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * hidden_dim, upsample_factor ** 2 * 9, 1))
        # Residual refinement starts from the identity.
        nn.init.zeros_(self.flow_head[-1].weight)
        nn.init.zeros_(self.flow_head[-1].bias)

    def init_state(self, x_tvm: torch.Tensor) -> DecoderState:
        return DecoderState(hidden=torch.tanh(self.hidden_init(x_tvm)))

    def refine(self, state: DecoderState, f_cur: torch.Tensor,
               x_tvm: torch.Tensor, cv: CostVolume):
        """One recurrent update; returns (new state, flow estimate)."""
        cells = f_cur * (self.flow_scale / self.upsample_factor)
        corr = lookup(cv, cells, self.radius)
        motion = self.motion_enc(corr, f_cur)
        readout = self.memory_read(state.hidden, state.memory)
        hidden = self.gru(state.hidden,
                          torch.cat([x_tvm, motion, readout], dim=1))
        flow_8 = f_cur + self.flow_head(hidden)
        flow_full = convex_upsample(flow_8 * self.flow_scale,
                                    self.mask_head(hidden),
                                    self.upsample_factor)
        memory = (state.memory + [hidden])[-self.memory_slots:]
        return (DecoderState(hidden, memory),
                FlowEstimate(flow_8, flow_full))
