"""Feature encoders for frames and event grids, plus the appearance/boundary
extractor branches feeding the fusion stage.

Both encoders share one architecture: six residual blocks with instance
normalization and three stride-2 stages, mapping (in_channels, H, W) to
(out_channels, H/8, W/8). Replicate padding keeps spatially constant inputs
spatially constant, which the extractor initialization relies on: the
boundary branch starts from derivative (Sobel-style) kernels that annihilate
constants, the appearance branch from local averaging kernels. Both remain
fully trainable.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError


def _conv(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1):
    return nn.Conv2d(in_ch, out_ch, kernel, stride=stride,
                     padding=kernel // 2, padding_mode="replicate")


class ResidualBlock(nn.Module):
    """Residual conv block; downsampling is anti-aliased (stride-1 convs
    followed by average pooling) so features stay matchable at sub-stride
    displacements. Plain strided convs alias the texture frequencies that
    all-pairs correlation relies on."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = _conv(in_ch, out_ch)
        self.norm1 = nn.InstanceNorm2d(out_ch, affine=True)
        self.conv2 = _conv(out_ch, out_ch)
        self.norm2 = nn.InstanceNorm2d(out_ch, affine=True)
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.AvgPool2d(stride) if stride > 1 else nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1),
                nn.InstanceNorm2d(out_ch, affine=True))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = self.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.pool(self.relu(y + self.shortcut(x)))


class FeatureEncoder(nn.Module):
    """Six residual blocks, three 2x anti-aliased downsampling stages:
    input -> (out_channels, H/8, W/8)."""

    def __init__(self, in_channels: int, out_channels: int = 128,
                 stage_dims: tuple[int, int, int] = (48, 96, 128)):
        super().__init__()
        d1, d2, d3 = stage_dims
        self.blocks = nn.Sequential(
            ResidualBlock(in_channels, d1, stride=2),
            ResidualBlock(d1, d1),
            ResidualBlock(d1, d2, stride=2),
            ResidualBlock(d2, d2),
            ResidualBlock(d2, d3, stride=2),
            ResidualBlock(d3, d3),
        )
        self.head = nn.Conv2d(d3, out_channels, 1)
        self.out_channels = out_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % 8 or x.shape[-1] % 8:
            raise ConfigError(
                f"encoder input dims must be multiples of 8, got "
                f"{tuple(x.shape[-2:])}; pad first")
        return self.head(self.blocks(x))


def encode_frame_pair(encoder: FeatureEncoder, frames: torch.Tensor):
    """Encode a normalized (B, 2, H, W) frame pair with shared weights."""
    if frames.shape[1] != 2:
        raise ConfigError(f"expected a frame pair, got {frames.shape[1]} frames")
    return encoder(frames[:, 0:1]), encoder(frames[:, 1:2])


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0],
                         [-2.0, 0.0, 2.0],
                         [-1.0, 0.0, 1.0]]) / 4.0
_AVERAGE = torch.full((3, 3), 1.0 / 9.0)


class ExtractorBranch(nn.Module):
    """2-layer conv branch with structured first-layer initialization.

    ``kind`` "boundary" seeds the first layer with channelwise horizontal /
    vertical derivative kernels (alternating per output channel); "appearance"
    seeds it with channelwise 3x3 averaging kernels.
    """

    def __init__(self, channels: int, kind: str):
        super().__init__()
        if kind not in ("appearance", "boundary"):
            raise ConfigError(f"unknown extractor kind {kind!r}")
        self.conv1 = _conv(channels, channels)
        self.conv2 = _conv(channels, channels)
        self.relu = nn.ReLU(inplace=True)
        with torch.no_grad():
            self.conv1.weight.zero_()
            self.conv1.bias.zero_()
            for o in range(channels):
                if kind == "boundary":
                    k = _SOBEL_X if o % 2 == 0 else _SOBEL_X.t()
                else:
                    k = _AVERAGE
                self.conv1.weight[o, o] = k

    def forward(self, x):
        return self.conv2(self.relu(self.conv1(x)))


def split_appearance_boundary(appearance: ExtractorBranch,
                              boundary: ExtractorBranch,
                              x: torch.Tensor):
    """Run both extractor branches on one feature map."""
    return appearance(x), boundary(x)
