"""High-speed (motion blur) and low-light degradations for frame sequences."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import DataError
from .scenes import smooth_texture

MODES = ("none", "high_speed", "low_light")


@dataclass
class DegradationSpec:
    mode: str = "none"
    blur_subframes: int = 1
    gamma: float = 1.0
    read_noise_sigma: float = 0.0
    photon_scale: float = 0.0  # 0 disables shot noise; larger = less noise
    gain: float = 1.0
    # Smooth spatially varying illumination (low dynamic range): scene
    # regions fall to illum_floor brightness while others stay lit. 1.0
    # disables it. illum_cell sets the field's spatial smoothness in px.
    illum_floor: float = 1.0
    illum_cell: int = 24

    def validate(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"unknown degradation mode {self.mode!r}")
        if self.blur_subframes < 1:
            raise DataError("blur_subframes must be >= 1")
        if self.gamma <= 0:
            raise DataError("gamma must be > 0")
        if self.read_noise_sigma < 0 or self.photon_scale < 0:
            raise DataError("noise parameters must be >= 0")
        if not 0 < self.illum_floor <= 1 or self.illum_cell < 1:
            raise DataError("need 0 < illum_floor <= 1 and illum_cell >= 1")
        if self.mode == "none" and not (self.blur_subframes == 1
                                        and self.gamma == 1.0
                                        and self.read_noise_sigma == 0.0
                                        and self.illum_floor == 1.0):
            raise DataError("mode='none' requires blur_subframes=1, gamma=1, "
                            "read_noise_sigma=0, illum_floor=1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def high_speed(cls, blur_subframes: int = 8) -> "DegradationSpec":
        return cls(mode="high_speed", blur_subframes=blur_subframes)

    @classmethod
    def low_light(cls, gamma: float = 2.5, photon_scale: float = 30.0,
                  read_noise_sigma: float = 0.02, gain: float = 1.0,
                  illum_floor: float = 1.0,
                  illum_cell: int = 24) -> "DegradationSpec":
        return cls(mode="low_light", gamma=gamma, photon_scale=photon_scale,
                   read_noise_sigma=read_noise_sigma, gain=gain,
                   illum_floor=illum_floor, illum_cell=illum_cell)


def degrade(frames: np.ndarray, spec: DegradationSpec,
            rng_seed: int = 0) -> np.ndarray:
    """Apply a degradation to a frame sequence. Deterministic per seed.

    high_speed expects a supersampled sequence whose length is a multiple of
    blur_subframes (one exposure stack per output frame) and box-averages
    each stack. low_light applies I -> clip(I^gamma * gain) plus optional
    Poisson shot noise (scaled by photon_scale) and Gaussian read noise.
    """
    spec.validate()
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3:
        raise DataError("frames must be a (K, H, W) sequence")

    if spec.mode == "none":
        return frames.copy()

    if spec.mode == "high_speed":
        b = spec.blur_subframes
        if len(frames) % b != 0:
            raise DataError(
                f"high_speed needs len(frames) divisible by blur_subframes "
                f"({len(frames)} vs {b})")
        k, h, w = frames.shape
        return frames.reshape(k // b, b, h, w).mean(axis=1)

    rng = np.random.default_rng(rng_seed)
    out = frames.astype(np.float64)
    if spec.illum_floor < 1.0:
        # Static for the whole sequence: lighting does not follow the motion.
        # Roughly half the field sits exactly at the floor (hard shadow);
        # the rest ramps smoothly up to full brightness.
        field = smooth_texture(int(rng.integers(2 ** 31)), frames.shape[1],
                               frames.shape[2], cell=spec.illum_cell,
                               low=0.0, high=1.0)
        lit = np.clip(2.0 * field - 1.0, 0.0, 1.0) ** 1.5
        illum = spec.illum_floor + (1.0 - spec.illum_floor) * lit
        out = out * illum[None]
    out = np.clip(out ** spec.gamma * spec.gain, 0.0, 1.0)
    if spec.photon_scale > 0:
        out = rng.poisson(out * spec.photon_scale) / spec.photon_scale
    if spec.read_noise_sigma > 0:
        out = out + rng.normal(0.0, spec.read_noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)
