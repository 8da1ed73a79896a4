"""Flow visualization with the usual color-wheel coding: hue encodes
direction (0 degrees = rightward), saturation scales with magnitude
normalized by the field maximum, value stays at 1 (zero motion renders
white)."""

from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image


def flow_to_color(flow: np.ndarray, max_flow: float | None = None) -> np.ndarray:
    """(H, W, 2) flow in pixels -> (H, W, 3) uint8 RGB."""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    if max_flow is None:
        max_flow = mag.max()
    hsv = np.zeros(flow.shape[:2] + (3,))
    hsv[..., 0] = (np.arctan2(v, u) / (2 * np.pi)) % 1.0
    hsv[..., 1] = 0.0 if max_flow <= 0 else np.clip(mag / max_flow, 0, 1)
    hsv[..., 2] = 1.0
    return (hsv_to_rgb(hsv) * 255).round().astype(np.uint8)


def save_flow_image(path, flow: np.ndarray,
                    max_flow: float | None = None) -> None:
    Image.fromarray(flow_to_color(flow, max_flow)).save(path)
