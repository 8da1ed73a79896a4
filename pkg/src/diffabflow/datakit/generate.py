"""Dataset generation: random scenes -> (frames, events, flow) samples.

Per-sample seeds derive from ``global_seed + sample_index`` so generation is
reproducible and trivially parallel across samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degrade import DegradationSpec, degrade
from .events import simulate_events
from .io import Sample, write_manifest, write_sample
from .scenes import (Scene, SceneObject, SHAPE_KINDS, render_exposure_stacks,
                     render_scene, render_sequence, validate_scene)

DEFAULT_CONTRAST_THRESHOLD = 0.2
DEFAULT_SUBFRAMES = 8
DEFAULT_FRAME_PERIOD = 0.04  # seconds per frame interval


@dataclass
class GenerationConfig:
    canvas: tuple[int, int] = (64, 64)
    max_displacement: float = 8.0
    min_objects: int = 1
    max_objects: int = 3
    kinds: tuple[str, ...] = SHAPE_KINDS
    # Camera-motion-like background translation (texture wraps around).
    # Speed is drawn from this range times max_displacement; a fraction of
    # scenes keeps the background static.
    background_speed_range: tuple[float, float] = (0.2, 0.75)
    static_background_prob: float = 0.2
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD
    subframes_per_frame: int = DEFAULT_SUBFRAMES
    frame_period: float = DEFAULT_FRAME_PERIOD
    supersample: int = 2


def random_scene(seed: int, cfg: GenerationConfig,
                 frame_count: int = 2) -> Scene:
    rng = np.random.default_rng(seed)
    height, width = cfg.canvas
    horizon = frame_count - 1
    objects = []
    for i in range(int(rng.integers(cfg.min_objects, cfg.max_objects + 1))):
        size = float(rng.uniform(6.0, 13.0))
        speed = float(rng.uniform(0.25, 1.0) * cfg.max_displacement)
        angle = float(rng.uniform(0.0, 2 * np.pi))
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
        # Margins keep the object inside the canvas over the whole horizon.
        x0 = rng.uniform(size + max(0.0, -vx) * horizon,
                         width - 1 - size - max(0.0, vx) * horizon)
        y0 = rng.uniform(size + max(0.0, -vy) * horizon,
                         height - 1 - size - max(0.0, vy) * horizon)
        objects.append(SceneObject(
            kind=cfg.kinds[int(rng.integers(len(cfg.kinds)))],
            seed=int(rng.integers(2 ** 31)),
            position=(float(x0), float(y0)),
            velocity=(vx, vy),
            size=size,
        ))
    if rng.random() < cfg.static_background_prob:
        bg_velocity = (0.0, 0.0)
    else:
        lo, hi = cfg.background_speed_range
        speed = float(rng.uniform(lo, hi) * cfg.max_displacement)
        angle = float(rng.uniform(0.0, 2 * np.pi))
        bg_velocity = (speed * np.cos(angle), speed * np.sin(angle))
    scene = Scene(canvas_size=cfg.canvas, objects=objects,
                  background_seed=int(rng.integers(2 ** 31)),
                  frame_count=frame_count,
                  background_velocity=bg_velocity)
    validate_scene(scene, cfg.max_displacement)
    return scene


def make_sample(seed: int, spec: DegradationSpec,
                cfg: GenerationConfig) -> Sample:
    """Build one frame-pair sample with ground truth and events.

    Blurred samples render their scene with one extra frame of validity so
    the second frame's forward exposure window stays inside the motion range.
    """
    blurred = spec.mode == "high_speed"
    scene = random_scene(seed, cfg, frame_count=3 if blurred else 2)
    frames, flows = render_scene(scene, cfg.supersample)

    highrate, times = render_sequence(scene, cfg.subframes_per_frame,
                                      cfg.supersample, n_frames=2)
    events = simulate_events(highrate, cfg.contrast_threshold,
                             timestamps=times * cfg.frame_period)

    if blurred:
        stacks = render_exposure_stacks(scene, spec.blur_subframes,
                                        cfg.supersample, n_frames=2)
        out_frames = degrade(stacks, spec, rng_seed=seed)
    else:
        out_frames = degrade(frames[:2], spec, rng_seed=seed)

    meta = {"seed": seed, "degradation": spec.to_dict(),
            "max_displacement": cfg.max_displacement,
            "contrast_threshold": cfg.contrast_threshold}
    return Sample(out_frames.astype(np.float32), events,
                  flows[0].astype(np.float32), meta)


def generate_split(root, split: str, count: int, spec: DegradationSpec,
                   cfg: GenerationConfig | None = None,
                   global_seed: int = 0) -> Path:
    """Generate ``count`` samples plus the split manifest; returns its path."""
    cfg = cfg or GenerationConfig()
    spec.validate()
    root = Path(root)
    dirs = []
    for index in range(count):
        name = f"{split}_{index:05d}"
        sample = make_sample(global_seed + index, spec, cfg)
        write_sample(root / name, sample)
        dirs.append(name)
    return write_manifest(root, split, dirs, spec,
                          canvas=list(cfg.canvas),
                          max_displacement=cfg.max_displacement,
                          global_seed=global_seed)
