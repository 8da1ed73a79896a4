"""Network-ready tensors: event voxel grids, frame and flow normalization.

Events are rasterized into a (bins, H, W) grid with polarity-signed mass and
linear interpolation along normalized time, so total grid mass equals the
polarity sum of the stream. Flows are mapped between pixel units and the
unit-scale space the denoiser operates in by a simple divisor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datakit.events import EventStream
from .errors import DataError


@dataclass
class VoxelGrid:
    data: np.ndarray  # (bins, H, W) float32, polarity-signed mass
    t_begin: float
    t_end: float

    @property
    def bins(self) -> int:
        return self.data.shape[0]


def voxelize(stream: EventStream, bins: int, height: int,
             width: int) -> VoxelGrid:
    """Rasterize an event stream into a voxel grid.

    Each event deposits its polarity into the two bins adjacent to its
    normalized time t* = (t - t_begin) / (t_end - t_begin) * (bins - 1),
    with linear weights.
    """
    if bins < 1:
        raise DataError("bins must be >= 1")
    if stream.t_end <= stream.t_begin:
        raise DataError("voxelize needs t_end > t_begin")
    grid = np.zeros((bins, height, width), dtype=np.float64)
    if len(stream) == 0:
        return VoxelGrid(grid.astype(np.float32), stream.t_begin, stream.t_end)
    if stream.t.min() < stream.t_begin - 1e-12 or \
            stream.t.max() > stream.t_end + 1e-12:
        raise DataError("events outside [t_begin, t_end]")

    span = stream.t_end - stream.t_begin
    tstar = (stream.t - stream.t_begin) / span * (bins - 1)
    lo = np.floor(tstar).astype(np.int64)
    frac = tstar - lo
    p = stream.p.astype(np.float64)

    flat = grid.reshape(bins, -1)
    idx = stream.y.astype(np.int64) * width + stream.x.astype(np.int64)
    np.add.at(flat, (lo, idx), p * (1.0 - frac))
    hi_ok = lo + 1 < bins
    np.add.at(flat, (lo[hi_ok] + 1, idx[hi_ok]), p[hi_ok] * frac[hi_ok])
    return VoxelGrid(grid.astype(np.float32), stream.t_begin, stream.t_end)


def normalize_frames(frames: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to [-1, 1] network input."""
    frames = np.clip(np.asarray(frames, dtype=np.float32), 0.0, 1.0)
    return (frames - 0.5) / 0.5


def denormalize_frames(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, dtype=np.float32) * 0.5 + 0.5


@dataclass
class FlowNormalizer:
    """Maps pixel flow into the unit-scale space the denoiser works in.

    ``scale`` should match the dataset's maximum displacement so ground truth
    stays inside the sampler's effective support; values are clamped at
    ``clamp_slack`` to tolerate slight overshoot.
    """

    scale: float
    clamp_slack: float = 1.1

    def __post_init__(self):
        if self.scale <= 0:
            raise DataError("FlowNormalizer.scale must be > 0")

    def to_diffusion(self, flow):
        out = flow / self.scale
        if isinstance(out, np.ndarray):
            return np.clip(out, -self.clamp_slack, self.clamp_slack)
        return out.clamp(-self.clamp_slack, self.clamp_slack)

    def to_pixels(self, flow):
        return flow * self.scale
