"""On-disk formats: flow files, event files, PNG frames, sample directories.

Flow file layout (little-endian throughout):
    float32 magic 202021.25 | int32 width | int32 height |
    height*width*2 float32 interleaved (u, v), row-major.

Event file layout:
    16-byte header: ASCII "EVT1" | uint32 count | uint64 reserved,
    then ``count`` 16-byte records: float64 t | uint16 x | uint16 y |
    int8 p | 3 pad bytes.

A sample directory holds frame0.png, frame1.png, events.evt, flow.flo and
meta.json; a split manifest is a JSON document listing sample directories
and the degradation they were built with.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import (DimensionMismatchError, MagicNumberError,
                      TruncatedFileError)
from .degrade import DegradationSpec
from .events import EventStream

FLOW_MAGIC = 202021.25
EVENT_MAGIC = b"EVT1"
_EVENT_HEADER = struct.Struct("<4sIQ")
_EVENT_RECORD_SIZE = 16


def write_flow(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionMismatchError(f"flow must be (H, W, 2), got {flow.shape}")
    height, width = flow.shape[:2]
    with open(path, "wb") as f:
        np.float32(FLOW_MAGIC).tofile(f)
        np.int32(width).tofile(f)
        np.int32(height).tofile(f)
        flow.astype("<f4").tofile(f)


def read_flow(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise TruncatedFileError(f"{path}: flow header truncated")
        magic = np.frombuffer(head, "<f4", count=1)[0]
        if magic != np.float32(FLOW_MAGIC):
            raise MagicNumberError(f"{path}: bad flow magic {magic!r}")
        width, height = np.frombuffer(head[4:], "<i4", count=2)
        if width <= 0 or height <= 0:
            raise DimensionMismatchError(
                f"{path}: invalid flow dims {width}x{height}")
        data = f.read()
    expected = int(width) * int(height) * 2 * 4
    if len(data) != expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} payload bytes, got {len(data)}")
    return np.frombuffer(data, "<f4").reshape(height, width, 2).copy()


def write_events(path, stream: EventStream) -> None:
    count = len(stream)
    with open(path, "wb") as f:
        f.write(_EVENT_HEADER.pack(EVENT_MAGIC, count, 0))
        if count:
            records = np.zeros(count, dtype=[("t", "<f8"), ("x", "<u2"),
                                             ("y", "<u2"), ("p", "i1"),
                                             ("pad", "V3")])
            records["t"] = stream.t
            records["x"] = stream.x
            records["y"] = stream.y
            records["p"] = stream.p
            records.tofile(f)


def read_events(path, t_begin: float | None = None,
                t_end: float | None = None) -> EventStream:
    """Read an event file. The header does not store the stream's time span,
    so callers that need exact bounds pass them (from sample metadata)."""
    with open(path, "rb") as f:
        head = f.read(_EVENT_HEADER.size)
        if len(head) < _EVENT_HEADER.size:
            raise TruncatedFileError(f"{path}: event header truncated")
        magic, count, _reserved = _EVENT_HEADER.unpack(head)
        if magic != EVENT_MAGIC:
            raise MagicNumberError(f"{path}: bad event magic {magic!r}")
        data = f.read()
    if len(data) != count * _EVENT_RECORD_SIZE:
        raise TruncatedFileError(
            f"{path}: expected {count} records "
            f"({count * _EVENT_RECORD_SIZE} bytes), got {len(data)} bytes")
    if count == 0:
        return EventStream.empty(t_begin or 0.0, t_end or 0.0)
    records = np.frombuffer(data, dtype=[("t", "<f8"), ("x", "<u2"),
                                         ("y", "<u2"), ("p", "i1"),
                                         ("pad", "V3")])
    t = records["t"].astype(np.float64)
    if t_begin is None:
        t_begin = float(t.min())
    if t_end is None:
        t_end = float(t.max())
    return EventStream(t, records["x"].astype(np.int32),
                       records["y"].astype(np.int32),
                       records["p"].astype(np.int8),
                       float(t_begin), float(t_end))


def write_frame_png(path, frame: np.ndarray) -> None:
    img = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path)


def read_frame_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    return arr / 255.0


@dataclass
class Sample:
    """One dataset element: degraded frame pair, events, ground-truth flow."""

    frames: np.ndarray  # (2, H, W) float32 in [0, 1]
    events: EventStream
    flow: np.ndarray  # (H, W, 2) float32, pixels
    meta: dict = field(default_factory=dict)


def write_sample(directory, sample: Sample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    height, width = sample.frames.shape[1:]
    if sample.flow.shape[:2] != (height, width):
        raise DimensionMismatchError(
            f"flow dims {sample.flow.shape[:2]} != frame dims {(height, width)}")
    sample.events.validate(height, width)
    write_frame_png(directory / "frame0.png", sample.frames[0])
    write_frame_png(directory / "frame1.png", sample.frames[1])
    write_events(directory / "events.evt", sample.events)
    write_flow(directory / "flow.flo", sample.flow)
    meta = dict(sample.meta)
    meta.update(height=height, width=width,
                t_begin=sample.events.t_begin, t_end=sample.events.t_end)
    with open(directory / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def read_sample(directory) -> Sample:
    directory = Path(directory)
    with open(directory / "meta.json") as f:
        meta = json.load(f)
    frames = np.stack([read_frame_png(directory / "frame0.png"),
                       read_frame_png(directory / "frame1.png")])
    events = read_events(directory / "events.evt",
                         meta.get("t_begin"), meta.get("t_end"))
    flow = read_flow(directory / "flow.flo")
    height, width = frames.shape[1:]
    if (meta["height"], meta["width"]) != (height, width):
        raise DimensionMismatchError(
            f"{directory}: metadata dims {(meta['height'], meta['width'])} "
            f"!= frame dims {(height, width)}")
    if flow.shape[:2] != (height, width):
        raise DimensionMismatchError(
            f"{directory}: flow dims {flow.shape[:2]} != frame dims "
            f"{(height, width)}")
    events.validate(height, width)
    return Sample(frames, events, flow, meta)


def write_manifest(root, split: str, sample_dirs: list[str],
                   degradation: DegradationSpec, **extra) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {"split": split, "samples": sorted(sample_dirs),
           "degradation": degradation.to_dict(), **extra}
    path = root / f"{split}.json"
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    return path


def read_manifest(root, split: str) -> dict:
    path = Path(root) / f"{split}.json"
    with open(path) as f:
        doc = json.load(f)
    doc["degradation"] = DegradationSpec.from_dict(doc["degradation"])
    return doc
