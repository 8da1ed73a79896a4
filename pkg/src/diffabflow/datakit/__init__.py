"""Synthetic frame-event-flow data: rendering, events, degradations, formats."""

from .degrade import DegradationSpec, degrade
from .events import (EventStream, event_count_image, simulate_events,
                     split_at_midpoint)
from .generate import GenerationConfig, generate_split, make_sample, random_scene
from .io import (Sample, read_events, read_flow, read_manifest, read_sample,
                 write_events, write_flow, write_manifest, write_sample)
from .scenes import (Scene, SceneObject, render_exposure_stacks, render_frame,
                     render_scene, render_sequence, validate_scene)

__all__ = [
    "DegradationSpec", "degrade",
    "EventStream", "event_count_image", "simulate_events", "split_at_midpoint",
    "GenerationConfig", "generate_split", "make_sample", "random_scene",
    "Sample", "read_events", "read_flow", "read_manifest", "read_sample",
    "write_events", "write_flow", "write_manifest", "write_sample",
    "Scene", "SceneObject", "render_exposure_stacks", "render_frame",
    "render_scene", "render_sequence", "validate_scene",
]
