"""Training loop: one uniformly drawn noise level per step, a single
denoising pass supervised at every decoder iteration, gradient clipping,
atomic checkpoints, and periodic validation."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .dataset import FlowDataset, downsample_flow
from .diffusion import forward_diffuse, make_schedule
from .errors import CheckpointError, ConfigError, NumericError
from .model import DiffABFlow
from .objectives import LossWeights, epe, fl_all, total_loss
from .representation import FlowNormalizer

log = logging.getLogger("diffabflow")


def build_model(config: RunConfig) -> DiffABFlow:
    config.validate()
    schedule = make_schedule(config.diffusion.total_steps,
                             config.diffusion.schedule,
                             config.diffusion.denoise_steps,
                             config.diffusion.beta_min,
                             config.diffusion.beta_max)
    return DiffABFlow(config.model, schedule, config.modality, config.fusion,
                      config.data.voxel_bins, config.data.max_displacement,
                      config.diffusion.decode_iters)


def save_checkpoint(path, model: DiffABFlow, config: RunConfig,
                    step: int, optimizer=None) -> None:
    """Write-temp-rename so a crash never leaves a partial checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": model.state_dict(),
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "schedule": model.schedule.to_dict(),
        "step": step,
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, overrides: dict | None = None):
    """Rebuild the model recorded in a checkpoint. Returns (model, config,
    payload). Parameter shape mismatches are reported per namespace."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    doc = payload["config"]
    if overrides:
        doc = {**doc, **overrides}
    config = RunConfig.from_dict(doc)
    model = build_model(config)
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        namespaces = sorted({line.strip().split(".")[0].strip('"')
                             for line in str(exc).splitlines()
                             if "." in line})
        raise CheckpointError(
            f"checkpoint {path} does not match the configured model "
            f"(offending namespaces: {', '.join(n for n in namespaces if n)}); "
            f"original error: {exc}") from exc
    return model, config, payload


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)


def validation_metrics(model: DiffABFlow, dataset: FlowDataset,
                       steps_k: int | None = None, iters_n: int | None = None,
                       max_samples: int | None = None, seed: int = 0,
                       batch_size: int = 8):
    """EPE / outlier percentage over a split, deterministic per seed."""
    n = len(dataset) if max_samples is None else min(max_samples, len(dataset))
    epes, fls, times = [], [], []
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        batch = dataset.batch(idx)
        generator = torch.Generator().manual_seed(seed + start)
        begin = time.perf_counter()
        est, _ = model.sample(batch["frames"], batch["grids"],
                              steps_k=steps_k, iters_n=iters_n,
                              generator=generator)
        times.append(time.perf_counter() - begin)
        pred = est.flow_full.permute(0, 2, 3, 1)
        for b in range(pred.shape[0]):
            epes.append(epe(pred[b], batch["flow"][b]))
            fls.append(fl_all(pred[b], batch["flow"][b]))
    return {
        "epe": float(np.mean(epes)),
        "epe_median": float(np.median(epes)),
        "fl_all": float(np.mean(fls)),
        "seconds_per_batch": float(np.mean(times)),
        "samples": n,
    }


def train(config: RunConfig, progress: bool = False) -> dict:
    """Run the full training; returns a summary with final metrics."""
    config.validate()
    _seed_everything(config.seed)
    train_set = FlowDataset(config.data.root, config.data.train_split,
                            config.data.voxel_bins)
    val_set = FlowDataset(config.data.root, config.data.val_split,
                          config.data.voxel_bins)
    if abs(train_set.max_displacement - config.data.max_displacement) > 1e-9:
        raise ConfigError(
            f"config max_displacement {config.data.max_displacement} does not "
            f"match the dataset manifest ({train_set.max_displacement}); the "
            f"model's flow scale is baked from the config")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    model = build_model(config)
    schedule = model.schedule
    weights = LossWeights(config.loss.smooth_weight, config.loss.event_weight,
                          config.loss.edge_alpha, config.loss.seq_decay)

    optim = torch.optim.AdamW(model.parameters(), lr=config.optim.lr,
                              weight_decay=config.optim.weight_decay)
    lr_sched = torch.optim.lr_scheduler.OneCycleLR(
        optim, max_lr=config.optim.lr,
        total_steps=config.optim.total_steps, pct_start=0.1)

    rng = np.random.default_rng(config.seed)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)
    normalizer = FlowNormalizer(train_set.max_displacement,
                                config.diffusion.clamp_slack)
    history = []
    order = rng.permutation(len(train_set))
    cursor = 0
    t0 = time.time()

    for step in range(1, config.optim.total_steps + 1):
        if cursor + config.optim.batch_size > len(order):
            order = rng.permutation(len(train_set))
            cursor = 0
        idx = order[cursor:cursor + config.optim.batch_size]
        cursor += config.optim.batch_size
        batch = train_set.batch(idx)

        f0 = normalizer.to_diffusion(downsample_flow(batch["flow"]))
        t = int(rng.integers(0, schedule.total_steps))
        noise = torch.randn(f0.shape, generator=noise_gen)
        f_t = forward_diffuse(f0, t, noise, schedule)

        context, cv = model.extract_features(batch["frames"], batch["grids"])
        preds, _ = model.predict_clean(f_t, t, context, cv,
                                       config.diffusion.decode_iters)
        gt_full = batch["flow"].permute(0, 3, 1, 2)
        loss, parts = total_loss([p.flow_full for p in preds], gt_full,
                                 batch["frame_raw"],
                                 (batch["event_counts"][:, 0],
                                  batch["event_counts"][:, 1]),
                                 weights)
        if not torch.isfinite(loss):
            dump = out_dir / f"nan_batch_step{step}.npz"
            np.savez(dump, **{k: v.detach().numpy() for k, v in batch.items()},
                     t=t)
            raise NumericError(f"non-finite loss at step {step}; offending "
                               f"batch dumped to {dump}")
        optim.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(),
                                       config.optim.clip_norm)
        optim.step()
        lr_sched.step()

        record = {"step": step, "loss": float(loss.detach()),
                  **{k: float(v.detach()) for k, v in parts.items()}}
        if step % config.optim.val_every == 0 or step == config.optim.total_steps:
            val = validation_metrics(model, val_set,
                                     config.diffusion.denoise_steps,
                                     config.diffusion.decode_iters,
                                     config.optim.val_samples, config.seed)
            record.update({"metric/epe": val["epe"],
                           "metric/fl_all": val["fl_all"]})
            save_checkpoint(out_dir / "checkpoint.pt", model, config, step,
                            optim)
            if progress:
                log.info("step %d loss %.4f val epe %.3f fl %.2f (%.0fs)",
                         step, record["loss"], val["epe"], val["fl_all"],
                         time.time() - t0)
        elif progress and step % 50 == 0:
            log.info("step %d loss %.4f (%.0fs)", step, record["loss"],
                     time.time() - t0)
        history.append(record)

    save_checkpoint(out_dir / "checkpoint.pt", model, config,
                    config.optim.total_steps, optim)
    with open(out_dir / "metrics.jsonl", "w") as f:
        for record in history:
            f.write(json.dumps(record) + "\n")

    final_val = validation_metrics(model, val_set,
                                   config.diffusion.denoise_steps,
                                   config.diffusion.decode_iters,
                                   config.optim.val_samples, config.seed)
    summary = {"config_hash": config.config_hash(),
               "steps": config.optim.total_steps,
               "final": final_val,
               "wall_seconds": time.time() - t0}
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary
