"""In-memory dataset over a generated split: loads samples from a manifest
and prepares every tensor the training and evaluation loops need."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datakit.events import event_count_image, split_at_midpoint
from .datakit.io import read_manifest, read_sample
from .errors import DataError
from .representation import FlowNormalizer, normalize_frames, voxelize


@dataclass
class Item:
    frames: torch.Tensor  # (2, H, W) normalized to [-1, 1]
    grids: torch.Tensor  # (2, bins, H, W): event grid halves
    flow: torch.Tensor  # (H, W, 2) ground truth, pixels
    event_counts: torch.Tensor  # (2, H, W) per-half polarity-absolute counts
    frame_raw: torch.Tensor  # (H, W) first frame in [0, 1], for edge weights


class FlowDataset:
    def __init__(self, root, split: str, voxel_bins: int = 5):
        self.root = Path(root)
        try:
            manifest = read_manifest(self.root, split)
        except FileNotFoundError as exc:
            raise DataError(f"missing manifest for split {split!r} "
                            f"under {root}") from exc
        self.split = split
        self.degradation = manifest["degradation"]
        self.max_displacement = float(manifest.get("max_displacement", 8.0))
        self.normalizer = FlowNormalizer(self.max_displacement)
        self.items: list[Item] = []
        for name in manifest["samples"]:
            sample = read_sample(self.root / name)
            height, width = sample.frames.shape[1:]
            first, second = split_at_midpoint(sample.events)
            grids = np.stack([
                voxelize(first, voxel_bins, height, width).data,
                voxelize(second, voxel_bins, height, width).data,
            ])
            counts = np.stack([event_count_image(first, height, width),
                               event_count_image(second, height, width)])
            self.items.append(Item(
                frames=torch.from_numpy(normalize_frames(sample.frames)),
                grids=torch.from_numpy(grids),
                flow=torch.from_numpy(sample.flow.copy()),
                event_counts=torch.from_numpy(counts),
                frame_raw=torch.from_numpy(sample.frames[0].copy()),
            ))
        if not self.items:
            raise DataError(f"split {split!r} is empty")

    def __len__(self) -> int:
        return len(self.items)

    def batch(self, indices) -> dict[str, torch.Tensor]:
        items = [self.items[i] for i in indices]
        return {
            "frames": torch.stack([it.frames for it in items]),
            "grids": torch.stack([it.grids for it in items]),
            "flow": torch.stack([it.flow for it in items]),
            "event_counts": torch.stack([it.event_counts for it in items]),
            "frame_raw": torch.stack([it.frame_raw for it in items]),
        }


def downsample_flow(flow: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """(B, H, W, 2) pixel flow -> (B, 2, H/f, W/f), values unchanged."""
    f = flow.permute(0, 3, 1, 2)
    return torch.nn.functional.avg_pool2d(f, factor, stride=factor)
