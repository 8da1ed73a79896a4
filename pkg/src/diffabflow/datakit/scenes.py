"""Synthetic moving-shape scenes with analytic ground-truth flow.

A scene is a set of rigid objects translating linearly over a textured
background. Because motion is purely translational, the per-pixel flow is
known in closed form: it equals the velocity of the topmost object covering
the pixel (or the background velocity elsewhere). The renderer can evaluate
the scene at any continuous time, which is what the event simulator and the
motion-blur pipeline rely on.

Conventions: positions and velocities are (x, y) in pixels, canvas_size is
(height, width), intensities live in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

SHAPE_KINDS = ("square", "circle", "textured-patch")


@dataclass
class SceneObject:
    kind: str
    seed: int
    position: tuple[float, float]  # center (x, y) at t=0, px
    velocity: tuple[float, float]  # (vx, vy) px per frame interval
    size: float = 10.0  # half-extent for square/patch, radius for circle
    texture_cell: int = 6  # patch texture smoothness scale, px

    def center_at(self, t: float) -> tuple[float, float]:
        return (self.position[0] + self.velocity[0] * t,
                self.position[1] + self.velocity[1] * t)


@dataclass
class Scene:
    canvas_size: tuple[int, int]  # (height, width)
    objects: list[SceneObject] = field(default_factory=list)
    background_seed: int = 0
    frame_count: int = 2
    background_velocity: tuple[float, float] = (0.0, 0.0)
    # Texture correlation length; must stay coarser than the feature stride
    # of any model trained on the data or sub-cell matching degenerates.
    background_cell: int = 12


def validate_scene(scene: Scene, max_displacement: float | None = None) -> None:
    """Reject scenes that violate the renderer's assumptions."""
    height, width = scene.canvas_size
    if scene.frame_count < 2:
        raise DataError(f"frame_count must be >= 2, got {scene.frame_count}")
    for i, obj in enumerate(scene.objects):
        if obj.kind not in SHAPE_KINDS:
            raise DataError(f"object {i}: unknown shape kind {obj.kind!r}")
        speed = math.hypot(*obj.velocity)
        if max_displacement is not None and speed > max_displacement + 1e-9:
            raise DataError(
                f"object {i}: velocity magnitude {speed:.3f} exceeds "
                f"max_displacement {max_displacement}")
        # Linear motion: checking both endpoint times covers the whole span.
        for t in (0.0, float(scene.frame_count - 1)):
            cx, cy = obj.center_at(t)
            if (cx - obj.size < 0 or cx + obj.size > width - 1
                    or cy - obj.size < 0 or cy + obj.size > height - 1):
                raise DataError(
                    f"object {i} leaves the canvas at t={t:g} "
                    f"(center=({cx:.1f},{cy:.1f}), size={obj.size:g})")


def smooth_texture(seed: int, height: int, width: int, cell: int = 4,
                   low: float = 0.15, high: float = 0.85) -> np.ndarray:
    """Deterministic smooth random texture in [low, high]."""
    rng = np.random.default_rng(seed)
    gh = max(2, math.ceil(height / cell) + 1)
    gw = max(2, math.ceil(width / cell) + 1)
    coarse = rng.uniform(low, high, size=(gh, gw))
    ys = np.linspace(0, gh - 1, height)
    xs = np.linspace(0, gw - 1, width)
    y0 = np.floor(ys).astype(int).clip(0, gh - 2)
    x0 = np.floor(xs).astype(int).clip(0, gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = coarse[np.ix_(y0, x0)]
    tr = coarse[np.ix_(y0, x0 + 1)]
    bl = coarse[np.ix_(y0 + 1, x0)]
    br = coarse[np.ix_(y0 + 1, x0 + 1)]
    return ((1 - fy) * (1 - fx) * tl + (1 - fy) * fx * tr
            + fy * (1 - fx) * bl + fy * fx * br).astype(np.float64)


def _bilinear_wrap(tex: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample a texture at float coords with wrap-around borders."""
    h, w = tex.shape
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    x0 %= w
    y0 %= h
    x1 = (x0 + 1) % w
    y1 = (y0 + 1) % h
    return ((1 - fy) * (1 - fx) * tex[y0, x0] + (1 - fy) * fx * tex[y0, x1]
            + fy * (1 - fx) * tex[y1, x0] + fy * fx * tex[y1, x1])


def _object_mask(obj: SceneObject, xs: np.ndarray, ys: np.ndarray,
                 t: float) -> np.ndarray:
    cx, cy = obj.center_at(t)
    if obj.kind == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= obj.size ** 2
    return (np.abs(xs - cx) <= obj.size) & (np.abs(ys - cy) <= obj.size)


def _object_intensity(obj: SceneObject, xs: np.ndarray, ys: np.ndarray,
                      t: float) -> np.ndarray:
    cx, cy = obj.center_at(t)
    if obj.kind == "textured-patch":
        side = max(4, int(round(2 * obj.size)) + 2)
        tex = smooth_texture(obj.seed, side, side, cell=obj.texture_cell)
        # Object-local coords so the texture translates rigidly with the object.
        return _bilinear_wrap(tex, xs - cx + obj.size, ys - cy + obj.size)
    rng = np.random.default_rng(obj.seed)
    return np.full_like(xs, rng.uniform(0.05, 0.95), dtype=np.float64)


def render_frame(scene: Scene, t: float, supersample: int = 1) -> np.ndarray:
    """Render the scene at continuous time ``t``.

    ``supersample`` is a spatial anti-aliasing factor: the scene is painted on
    a supersample x supersample subpixel grid and box-averaged down.
    """
    if supersample < 1:
        raise DataError(f"supersample must be >= 1, got {supersample}")
    height, width = scene.canvas_size
    s = supersample
    offs = (np.arange(s) + 0.5) / s - 0.5
    xs = (np.arange(width)[None, :] + offs[:, None]).reshape(-1)
    ys = (np.arange(height)[None, :] + offs[:, None]).reshape(-1)
    gx, gy = np.meshgrid(np.sort(xs), np.sort(ys))

    bg = smooth_texture(scene.background_seed, height, width,
                        cell=scene.background_cell)
    bvx, bvy = scene.background_velocity
    img = _bilinear_wrap(bg, gx - bvx * t, gy - bvy * t)
    for obj in scene.objects:
        mask = _object_mask(obj, gx, gy, t)
        if mask.any():
            img = np.where(mask, _object_intensity(obj, gx, gy, t), img)

    img = img.reshape(height, s, width, s).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_flow(scene: Scene, t: float) -> np.ndarray:
    """Analytic flow over [t, t+1]: (H, W, 2) with (u, v) in pixels."""
    height, width = scene.canvas_size
    gx, gy = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    flow = np.empty((height, width, 2), dtype=np.float32)
    flow[..., 0] = scene.background_velocity[0]
    flow[..., 1] = scene.background_velocity[1]
    # Later objects sit on top, so they overwrite earlier ones.
    for obj in scene.objects:
        mask = _object_mask(obj, gx, gy, t)
        flow[..., 0][mask] = obj.velocity[0]
        flow[..., 1][mask] = obj.velocity[1]
    return flow


def render_scene(scene: Scene, supersample: int = 1):
    """Render all keyframes plus the analytic flow between consecutive ones.

    Returns ``(frames, flows)`` with ``frame_count`` frames in [0, 1] and
    ``frame_count - 1`` flow fields in pixels.
    """
    validate_scene(scene)
    frames = np.stack([render_frame(scene, float(t), supersample)
                       for t in range(scene.frame_count)])
    flows = np.stack([render_flow(scene, float(t))
                      for t in range(scene.frame_count - 1)])
    return frames, flows


def render_sequence(scene: Scene, subframes_per_frame: int,
                    supersample: int = 1, n_frames: int | None = None):
    """Temporally supersampled rendering for event simulation.

    Returns ``(frames, times)`` where times are in frame units: uniformly
    spaced at 1/subframes_per_frame, covering [0, n_frames - 1]
    (default: all keyframes).
    """
    if subframes_per_frame < 1:
        raise DataError("subframes_per_frame must be >= 1")
    n_frames = scene.frame_count if n_frames is None else n_frames
    if not 2 <= n_frames <= scene.frame_count:
        raise DataError("n_frames must lie in [2, frame_count]")
    n = (n_frames - 1) * subframes_per_frame + 1
    times = np.arange(n, dtype=np.float64) / subframes_per_frame
    frames = np.stack([render_frame(scene, float(t), supersample)
                       for t in times])
    return frames, times


def render_exposure_stacks(scene: Scene, blur_subframes: int,
                           supersample: int = 1,
                           n_frames: int | None = None) -> np.ndarray:
    """Sub-frames for motion blur, ``blur_subframes`` per output frame.

    Every output frame k gets a forward exposure window [k, k + (b-1)/b],
    so consecutive blurred frames keep exposure centers exactly one frame
    interval apart and stay consistent with the analytic flow. The scene
    must therefore remain valid slightly past the last emitted keyframe
    (use a frame_count one larger than the frames emitted). Output shape is
    (n_frames * blur_subframes, H, W); averaging consecutive groups of
    ``blur_subframes`` yields the blurred frames.
    """
    if blur_subframes < 1:
        raise DataError("blur_subframes must be >= 1")
    b = blur_subframes
    n_frames = scene.frame_count if n_frames is None else n_frames
    horizon = n_frames - 1 + (b - 1) / b
    if horizon > scene.frame_count - 1 + 1e-9:
        raise DataError(
            f"exposure window reaches t={horizon:.3f} but the scene is only "
            f"valid through t={scene.frame_count - 1}; extend frame_count")
    stacks = []
    for k in range(n_frames):
        for t in k + np.arange(b) / b:
            stacks.append(render_frame(scene, float(t), supersample))
    return np.stack(stacks)
