"""Frame-event optical flow estimation with a conditional denoising
diffusion decoder, plus the synthetic data tooling to train and evaluate it
at desk scale."""

__version__ = "0.1.0"

from .config import RunConfig
from .diffusion import DiffusionSchedule, ddim_step, forward_diffuse, make_schedule
from .model import DiffABFlow
from .representation import FlowNormalizer, VoxelGrid, voxelize

__all__ = [
    "RunConfig", "DiffusionSchedule", "ddim_step", "forward_diffuse",
    "make_schedule", "DiffABFlow", "FlowNormalizer", "VoxelGrid", "voxelize",
    "__version__",
]
