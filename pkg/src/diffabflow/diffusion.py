"""Noise schedule, forward corruption, deterministic reverse update, and the
sinusoidal time embedding.

The reverse update is the eta=0 implicit form: given the current noisy field
f_t and a clean-field prediction, the implied noise is recovered as
(f_t - sqrt(abar_t) * pred) / sqrt(1 - abar_t) and re-applied at the target
step's signal level. All signal-retention coefficients are cumulative
products of (1 - beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class DiffusionSchedule:
    total_steps: int  # T
    betas: np.ndarray  # (T,) float64
    alpha_bars: np.ndarray  # (T,) float64, cumulative prod of (1 - beta)
    sample_steps: np.ndarray  # (K+1,) int, strictly decreasing, T-1 ... 0
    denoise_steps: int  # K

    def __post_init__(self):
        ab = self.alpha_bars
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ConfigError("alpha_bars must lie in (0, 1]")
        if np.any(np.diff(ab) > 1e-15):
            raise ConfigError("alpha_bars must be non-increasing")
        steps = self.sample_steps
        if steps[0] != self.total_steps - 1 or steps[-1] != 0:
            raise ConfigError("sample_steps must run from T-1 down to 0")
        if np.any(np.diff(steps) >= 0):
            raise ConfigError("sample_steps must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.total_steps:
            raise ConfigError(f"timestep {t} outside [0, {self.total_steps})")
        return float(self.alpha_bars[t])

    def steps_for(self, k: int) -> np.ndarray:
        return _spaced_steps(self.total_steps, k)

    def to_dict(self) -> dict:
        return {"total_steps": self.total_steps,
                "denoise_steps": self.denoise_steps,
                "beta_min": float(self.betas[0]),
                "beta_max": float(self.betas[-1])}


def _spaced_steps(total_steps: int, k: int) -> np.ndarray:
    if not 1 <= k <= total_steps:
        raise ConfigError(f"denoise step count {k} must satisfy 1 <= K <= T")
    steps = np.unique(np.round(np.linspace(0, total_steps - 1, k + 1)))
    return steps[::-1].astype(np.int64)


def make_schedule(total_steps: int, kind: str = "linear",
                  denoise_steps: int = 4, beta_min: float = 2e-3,
                  beta_max: float = 0.4) -> DiffusionSchedule:
    """Build a schedule. ``kind`` is "linear" (variances linearly spaced) or
    "cosine" (signal level follows a squared cosine).

    The default variance range is calibrated for short schedules (T ~ 50):
    the cumulative signal level at the last step is ~1e-5, so a sampling
    chain can start from pure noise. Per-1000-step conventions (1e-4..0.02)
    do NOT reach the noise regime within 50 steps.
    """
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, total_steps, dtype=np.float64)
        alpha_bars = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        s = 0.008
        ts = np.arange(total_steps + 1, dtype=np.float64) / total_steps
        f = np.cos((ts + s) / (1 + s) * np.pi / 2) ** 2
        alpha_bars = f[1:] / f[0]
        betas = np.clip(1.0 - alpha_bars / np.concatenate([[1.0], alpha_bars[:-1]]),
                        0.0, 0.999)
        alpha_bars = np.cumprod(1.0 - betas)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(total_steps, betas, alpha_bars,
                             _spaced_steps(total_steps, denoise_steps),
                             denoise_steps)


def forward_diffuse(f0, t: int, noise, schedule: DiffusionSchedule):
    """f_t = sqrt(abar_t) * f0 + sqrt(1 - abar_t) * noise."""
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * f0 + math.sqrt(1.0 - ab) * noise


def ddim_step(f_t, f_pred, t: int, t_prev: int, schedule: DiffusionSchedule,
              final_step: bool = False):
    """Deterministic reverse jump from step t to t_prev.

    ``final_step`` treats the target as fully denoised (signal level exactly
    1), which a sampling chain uses on its last jump so a perfect predictor
    is recovered exactly.
    """
    if not (t > t_prev >= 0):
        raise ConfigError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bar(t)
    one_minus = 1.0 - ab_t
    if one_minus < 1e-12:
        residual = f_t - math.sqrt(ab_t) * f_pred
        if float(abs(residual).max()) > 1e-6:
            raise NumericError(
                "implied noise undefined: signal level is 1 but f_t differs "
                "from the prediction")
        eps = residual * 0.0
    else:
        eps = (f_t - math.sqrt(ab_t) * f_pred) / math.sqrt(one_minus)
    ab_prev = 1.0 if final_step else schedule.alpha_bar(t_prev)
    return math.sqrt(ab_prev) * f_pred + math.sqrt(1.0 - ab_prev) * eps


def sinusoidal_embedding(t, dim: int) -> torch.Tensor:
    """Classic sin/cos position encoding of integer timesteps.

    Returns (..., dim): the first half holds sines, the second half cosines,
    over a geometric frequency ladder. t may be an int or an integer tensor.
    """
    if dim % 2 != 0:
        raise ConfigError("time embedding dim must be even")
    t = torch.as_tensor(t, dtype=torch.float32)
    squeeze = t.ndim == 0
    if squeeze:
        t = t[None]
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb[0] if squeeze else emb


class TimeEmbedder(nn.Module):
    """Sinusoidal encoding followed by a 2-layer MLP."""

    def __init__(self, dim: int = 128):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(),
                                 nn.Linear(dim, dim))

    def forward(self, t) -> torch.Tensor:
        return self.mlp(sinusoidal_embedding(t, self.dim))
