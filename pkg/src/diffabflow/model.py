"""Full flow-estimation network: encoders, fusion, correlation, conditioning,
and the recurrent denoising decoder, with the sampling loop on top.

Sampling starts from unit Gaussian noise in normalized flow space and runs a
fixed number of deterministic denoising jumps along the schedule's step
subsequence. Each jump conditions on the fused features and a correlation
lookup at the current flow, runs the recurrent decoder a fixed number of
iterations (memory reset per jump unless configured otherwise), and applies
the implicit reverse update to the decoder's clean-flow prediction. The
last jump returns that prediction directly.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .conditioning import TimeVisualMotionConditioner
from .correlation import CostVolume, build_cost_volume, lookup
from .decoder import DecoderState, FlowEstimate, MemoryGRUDecoder
from .diffusion import DiffusionSchedule, ddim_step
from .encoders import ExtractorBranch, FeatureEncoder, encode_frame_pair
from .errors import ConfigError
from .fusion import AppearanceBoundaryFusion, AttentionConfig


class DiffABFlow(nn.Module):
    def __init__(self, cfg: ModelConfig, schedule: DiffusionSchedule,
                 modality: str = "both", fusion: str = "attention",
                 voxel_bins: int = 5, flow_scale: float = 8.0,
                 decode_iters: int = 6):
        super().__init__()
        if modality not in ("frame", "event", "both"):
            raise ConfigError(f"unknown modality {modality!r}")
        self.cfg = cfg
        self.schedule = schedule
        self.modality = modality
        self.decode_iters = decode_iters
        c = cfg.channels
        self.encoder = nn.ModuleDict({
            "frame": FeatureEncoder(1, c, cfg.stage_dims),
            "event": FeatureEncoder(voxel_bins, c, cfg.stage_dims),
        })
        self.extractor = nn.ModuleDict({
            "appearance": ExtractorBranch(c, "appearance"),
            "boundary": ExtractorBranch(c, "boundary"),
        })
        attn = AttentionConfig(heads=cfg.heads, head_dim=c // cfg.heads)
        self.fusion = AppearanceBoundaryFusion(c, fusion, attn)
        self.tvm = TimeVisualMotionConditioner(
            c, cfg.lookup_channels, cfg.time_dim, cfg.heads,
            cfg.gate_per_pixel)
        self.mgdd = MemoryGRUDecoder(
            c, cfg.lookup_channels, cfg.hidden_dim, cfg.memory_slots,
            flow_scale, cfg.corr_radius)

    def _fuse_instant(self, x_f: torch.Tensor, x_e: torch.Tensor):
        if self.modality == "frame":
            return x_f
        if self.modality == "event":
            return x_e
        x_fa, x_fb = self.extractor["appearance"](x_f), self.extractor["boundary"](x_f)
        x_ea, x_eb = self.extractor["appearance"](x_e), self.extractor["boundary"](x_e)
        return self.fusion(x_f, x_e, x_fa, x_fb, x_ea, x_eb)

    def extract_features(self, frames: torch.Tensor, grids: torch.Tensor):
        """frames: (B, 2, H, W) normalized; grids: (B, 2, bins, H, W), the
        event grid split at the temporal midpoint. Returns the conditioning
        feature map and the cost volume."""
        x_f1, x_f2 = encode_frame_pair(self.encoder["frame"], frames)
        x_e1 = self.encoder["event"](grids[:, 0])
        x_e2 = self.encoder["event"](grids[:, 1])
        fused1 = self._fuse_instant(x_f1, x_e1)
        fused2 = self._fuse_instant(x_f2, x_e2)
        if self.cfg.correlate_on == "frame" and self.modality != "event":
            cv = build_cost_volume(x_f1, x_f2, self.cfg.corr_levels)
        else:
            cv = build_cost_volume(fused1, fused2, self.cfg.corr_levels)
        return fused1, cv

    def _lookup_cells(self, cv: CostVolume, flow_norm: torch.Tensor):
        cells = flow_norm * (self.mgdd.flow_scale / self.mgdd.upsample_factor)
        return lookup(cv, cells, self.cfg.corr_radius)

    def predict_clean(self, f_t: torch.Tensor, t: int, context: torch.Tensor,
                      cv: CostVolume, iters: int,
                      state: DecoderState | None = None):
        """Run ``iters`` recurrent refinements at noise level t.

        Returns the per-iteration flow estimates (last one is the clean-flow
        prediction) and the final decoder state.
        """
        if iters < 1:
            raise ConfigError("need at least one decoder iteration")
        cond = self.tvm(t, context, self._lookup_cells(cv, f_t))
        if state is None:
            state = self.mgdd.init_state(cond.x_tvm)
        preds: list[FlowEstimate] = []
        f = f_t
        for _ in range(iters):
            state, est = self.mgdd.refine(state, f, cond.x_tvm, cv)
            f = est.flow_8
            preds.append(est)
        return preds, state

    def denoise_step(self, f_t: torch.Tensor, t: int, t_prev: int,
                     context: torch.Tensor, cv: CostVolume, iters: int,
                     terminal: bool = False,
                     state: DecoderState | None = None):
        """One reverse jump t -> t_prev; returns (f_prev, estimates, state)."""
        preds, state = self.predict_clean(f_t, t, context, cv, iters,
                                          state=state)
        f_prev = ddim_step(f_t, preds[-1].flow_8, t, t_prev, self.schedule,
                           final_step=terminal)
        return f_prev, preds, state

    @torch.no_grad()
    def sample(self, frames: torch.Tensor, grids: torch.Tensor,
               steps_k: int | None = None, iters_n: int | None = None,
               generator: torch.Generator | None = None,
               collect_intermediates: bool = False):
        """Estimate flow for a batch. Deterministic given (weights, inputs,
        generator seed). Returns (final FlowEstimate, flow sequence
        [f_T, ..., clean estimate] in normalized units, and optionally all
        per-iteration estimates)."""
        was_training = self.training
        self.eval()
        try:
            steps = self.schedule.steps_for(
                steps_k if steps_k is not None else self.schedule.denoise_steps)
            iters = iters_n if iters_n is not None else self.decode_iters
            context, cv = self.extract_features(frames, grids)
            b, _, h8, w8 = context.shape
            f = torch.randn(b, 2, h8, w8, generator=generator,
                            device=context.device)
            sequence = [f]
            all_preds: list[list[FlowEstimate]] = []
            state = None
            est = None
            for i in range(len(steps) - 1):
                terminal = i == len(steps) - 2
                f, preds, state = self.denoise_step(
                    f, int(steps[i]), int(steps[i + 1]), context, cv, iters,
                    terminal=terminal,
                    state=state if self.cfg.carry_memory else None)
                est = preds[-1]
                sequence.append(f)
                if collect_intermediates:
                    all_preds.append(preds)
        finally:
            self.train(was_training)
        if collect_intermediates:
            return est, sequence, all_preds
        return est, sequence
