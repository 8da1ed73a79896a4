"""All-pairs correlation volume over two feature maps, with pyramid lookup.

Features are L2-normalized per position before correlation, so entries are
bounded in [-1, 1]. Level 0 stores every pairwise dot product; coarser
levels average-pool over the target dimensions. Memory for level 0 grows as
(H*W/64)^2, which is fine at the 64px scale this targets but quadratic in
image area.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError


@dataclass
class CostVolume:
    levels: list[torch.Tensor]  # level i: (B, H, W, H/2^i, W/2^i)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> tuple[int, int, int]:
        b, h, w = self.levels[0].shape[:3]
        return b, h, w


def build_cost_volume(feat1: torch.Tensor, feat2: torch.Tensor,
                      num_levels: int = 3) -> CostVolume:
    """All-pairs correlation of two (B, C, H, W) feature maps."""
    if feat1.shape != feat2.shape:
        raise ConfigError(f"feature shapes differ: {tuple(feat1.shape)} vs "
                          f"{tuple(feat2.shape)}")
    if num_levels < 1:
        raise ConfigError("num_levels must be >= 1")
    b, c, h, w = feat1.shape
    f1 = F.normalize(feat1, dim=1, eps=1e-8).reshape(b, c, h * w)
    f2 = F.normalize(feat2, dim=1, eps=1e-8).reshape(b, c, h * w)
    corr = torch.matmul(f1.transpose(1, 2), f2).reshape(b, h, w, h, w)

    levels = [corr]
    flat = corr.reshape(b * h * w, 1, h, w)
    for _ in range(num_levels - 1):
        flat = F.avg_pool2d(flat, 2, stride=2)
        levels.append(flat.reshape(b, h, w, *flat.shape[-2:]))
    return CostVolume(levels)


def lookup(cv: CostVolume, flow: torch.Tensor, radius: int = 3) -> torch.Tensor:
    """Sample correlation windows around flow-displaced target positions.

    flow: (B, 2, H, W) displacement in feature-grid cells. For each source
    pixel, a (2r+1)^2 window centered on p + flow(p) is bilinearly sampled at
    every pyramid level; out-of-bounds taps read zero. Output is
    (B, num_levels * (2r+1)^2, H, W), level-major.
    """
    b, h, w = cv.shape
    if flow.shape != (b, 2, h, w):
        raise ConfigError(f"flow shape {tuple(flow.shape)} does not match "
                          f"cost volume {(b, 2, h, w)}")
    r = radius
    device, dtype = flow.device, flow.dtype
    gy, gx = torch.meshgrid(torch.arange(h, device=device, dtype=dtype),
                            torch.arange(w, device=device, dtype=dtype),
                            indexing="ij")
    cx = (gx[None] + flow[:, 0]).reshape(b * h * w, 1, 1)
    cy = (gy[None] + flow[:, 1]).reshape(b * h * w, 1, 1)
    dd = torch.arange(-r, r + 1, device=device, dtype=dtype)
    dy, dx = torch.meshgrid(dd, dd, indexing="ij")

    out = []
    for i, level in enumerate(cv.levels):
        lh, lw = level.shape[-2:]
        tx = cx / 2 ** i + dx[None]
        ty = cy / 2 ** i + dy[None]
        grid = torch.stack([2 * tx / max(lw - 1, 1) - 1,
                            2 * ty / max(lh - 1, 1) - 1], dim=-1)
        sampled = F.grid_sample(level.reshape(b * h * w, 1, lh, lw), grid,
                                mode="bilinear", padding_mode="zeros",
                                align_corners=True)
        out.append(sampled.reshape(b, h, w, (2 * r + 1) ** 2))
    return torch.cat(out, dim=-1).permute(0, 3, 1, 2).contiguous()
