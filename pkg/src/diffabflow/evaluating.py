"""Evaluation, single-sample inference, and diagnostic analysis on top of a
trained checkpoint."""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .correlation import build_cost_volume
from .dataset import FlowDataset
from .datakit.events import split_at_midpoint
from .datakit.io import read_events, read_frame_png, write_flow
from .diagnostics import (gradient_response_histogram, kmeans_feature_analysis,
                          plot_clusters, plot_histogram, write_cluster_csv,
                          write_histogram_csv)
from .encoders import encode_frame_pair
from .errors import DataError
from .objectives import epe, fl_all
from .representation import normalize_frames, voxelize
from .training import load_checkpoint
from .visualize import save_flow_image

log = logging.getLogger("diffabflow")


def evaluate(checkpoint, split: str, steps_k: int | None = None,
             iters_n: int | None = None, out_dir=None, seed: int = 0,
             max_samples: int | None = None) -> dict:
    """Per-sample metrics over a split; writes CSV + JSON when out_dir given."""
    model, config, payload = load_checkpoint(checkpoint)
    dataset = FlowDataset(config.data.root, split, config.data.voxel_bins)
    k = steps_k if steps_k is not None else config.diffusion.denoise_steps
    n = iters_n if iters_n is not None else config.diffusion.decode_iters

    rows = []
    n_samples = len(dataset) if max_samples is None \
        else min(max_samples, len(dataset))
    scale = dataset.max_displacement
    for i in range(n_samples):
        batch = dataset.batch([i])
        generator = torch.Generator().manual_seed(seed + i)
        begin = time.perf_counter()
        est, _ = model.sample(batch["frames"], batch["grids"], steps_k=k,
                              iters_n=n, generator=generator)
        wall = time.perf_counter() - begin
        pred = est.flow_full.permute(0, 2, 3, 1)[0]
        # upsampler self-consistency, reported for monitoring only
        down = F.avg_pool2d(est.flow_full, 8) / scale
        rows.append({"sample": i, "epe": epe(pred, batch["flow"][0]),
                     "fl_all": fl_all(pred, batch["flow"][0]),
                     "seconds": wall,
                     "upsampler_gap": float((down - est.flow_8).abs().mean())})

    report = {
        "checkpoint": str(checkpoint),
        "config_hash": config.config_hash(),
        "split": split,
        "steps_k": k,
        "iters_n": n,
        "seed": seed,
        "epe_mean": float(np.mean([r["epe"] for r in rows])),
        "epe_median": float(np.median([r["epe"] for r in rows])),
        "fl_all_mean": float(np.mean([r["fl_all"] for r in rows])),
        "seconds_per_sample": float(np.mean([r["seconds"] for r in rows])),
        "upsampler_gap": float(np.mean([r["upsampler_gap"] for r in rows])),
        "samples": len(rows),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"eval_{split}_K{k}.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        with open(out_dir / f"eval_{split}_K{k}.json", "w") as f:
            json.dump(report, f, indent=2)
    return report


def _pad_to_multiple(x: torch.Tensor, multiple: int = 8):
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x, (h, w)


def infer(checkpoint, frame0_path, frame1_path, events_path, out_path,
          steps_k: int | None = None, iters_n: int | None = None,
          seed: int = 0) -> Path:
    """Estimate flow for one frame pair + event file; writes the flow file
    and a color visualization next to it."""
    model, config, _ = load_checkpoint(checkpoint)
    frames = np.stack([read_frame_png(frame0_path),
                       read_frame_png(frame1_path)])
    height, width = frames.shape[1:]
    stream = read_events(events_path)
    if len(stream) and (stream.x.max() >= width or stream.y.max() >= height):
        raise DataError("event coordinates exceed the frame dimensions")
    if stream.t_end <= stream.t_begin:
        stream.t_end = stream.t_begin + 1.0
    first, second = split_at_midpoint(stream)
    bins = config.data.voxel_bins
    grids = np.stack([voxelize(first, bins, height, width).data,
                      voxelize(second, bins, height, width).data])

    frames_t = torch.from_numpy(normalize_frames(frames))[None]
    grids_t = torch.from_numpy(grids)[None]
    if height % 8 or width % 8:
        log.warning("input %dx%d not divisible by 8; padding and cropping back",
                    height, width)
    frames_t, _ = _pad_to_multiple(frames_t)
    grids_t, _ = _pad_to_multiple(grids_t)

    generator = torch.Generator().manual_seed(seed)
    est, _ = model.sample(frames_t, grids_t, steps_k=steps_k, iters_n=iters_n,
                          generator=generator)
    flow = est.flow_full[0].permute(1, 2, 0).numpy()[:height, :width]

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_flow(out_path, flow)
    save_flow_image(out_path.with_suffix(".png"), flow)
    with open(out_path.with_suffix(".json"), "w") as f:
        json.dump({"config_hash": config.config_hash(), "seed": seed,
                   "steps_k": steps_k, "iters_n": iters_n,
                   "checkpoint": str(checkpoint)}, f, indent=2)
    return out_path


def analyze(checkpoint, split: str, out_dir, max_samples: int = 4,
            clusters: int = 4, bins: int = 10, seed: int = 0) -> dict:
    """Run the feature diagnostics over a few samples and write reports."""
    model, config, _ = load_checkpoint(checkpoint)
    dataset = FlowDataset(config.data.root, split, config.data.voxel_bins)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    batch = dataset.batch(range(min(max_samples, len(dataset))))
    model.eval()
    with torch.no_grad():
        x_f1, x_f2 = encode_frame_pair(model.encoder["frame"], batch["frames"])
        x_e1 = model.encoder["event"](batch["grids"][:, 0])
        x_e2 = model.encoder["event"](batch["grids"][:, 1])
        x_fa = model.extractor["appearance"](x_f1)
        x_fb = model.extractor["boundary"](x_f1)
        x_ea = model.extractor["appearance"](x_e1)
        x_eb = model.extractor["boundary"](x_e1)
        fused1 = model._fuse_instant(x_f1, x_e1)
        fused2 = model._fuse_instant(x_f2, x_e2)
        levels = model.cfg.corr_levels
        cv_frame = build_cost_volume(x_f1, x_f2, levels)
        cv_event = build_cost_volume(x_e1, x_e2, levels)
        cv_fused = build_cost_volume(fused1, fused2, levels)

    report = kmeans_feature_analysis(x_fa, x_fb, x_ea, x_eb, clusters, seed)
    hist = gradient_response_histogram(batch["frame_raw"].numpy(), cv_frame,
                                       cv_event, cv_fused, bins)
    write_cluster_csv(out_dir / "clusters.csv", report)
    write_histogram_csv(out_dir / "gradient_response.csv", hist)
    plot_clusters(out_dir / "clusters.png", report)
    plot_histogram(out_dir / "gradient_response.png", hist)
    summary = {
        "config_hash": config.config_hash(),
        "split": split,
        "inertia": report.inertia,
        "dispersion": hist.dispersion,
        "fused_flatter_than_frame": hist.dispersion["fused"] < hist.dispersion["frame"],
        "fused_flatter_than_event": hist.dispersion["fused"] < hist.dispersion["event"],
    }
    with open(out_dir / "analysis.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def spearman(xs, ys) -> float:
    """Spearman rank correlation."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    rx = np.argsort(np.argsort(xs)).astype(np.float64)
    ry = np.argsort(np.argsort(ys)).astype(np.float64)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    return float((rx * ry).sum() / denom) if denom else 0.0


def sweep_denoise_steps(checkpoint, split: str, ks=(1, 2, 3, 4, 5),
                        out_dir=None, seed: int = 0,
                        max_samples: int | None = None) -> dict:
    """Evaluate one checkpoint across denoise-step counts."""
    results = []
    hashes = set()
    for k in ks:
        report = evaluate(checkpoint, split, steps_k=k, out_dir=out_dir,
                          seed=seed, max_samples=max_samples)
        hashes.add(report["config_hash"])
        results.append({"K": k, "epe_median": report["epe_median"],
                        "epe_mean": report["epe_mean"],
                        "fl_all_mean": report["fl_all_mean"],
                        "seconds_per_sample": report["seconds_per_sample"]})
    if len(hashes) != 1:
        raise DataError(f"refusing to compare runs with mixed configs: {hashes}")
    summary = {
        "results": results,
        "time_spearman_vs_k": spearman([r["K"] for r in results],
                                       [r["seconds_per_sample"]
                                        for r in results]),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"sweep_K_{split}.json", "w") as f:
            json.dump(summary, f, indent=2)
        with open(out_dir / f"sweep_K_{split}.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(results[0]))
            writer.writeheader()
            writer.writerows(results)
    return summary
