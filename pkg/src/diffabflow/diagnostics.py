"""Feature-distribution diagnostics.

Two analyses mirror how the fusion stage is motivated and inspected:

* k-means clustering over pooled appearance/boundary tokens from both
  modalities, reporting how each modality's tokens spread over the clusters;
* per-pixel maximum correlation response, bucketed by local image-gradient
  magnitude, comparing cost volumes built from frame, event, and fused
  features. A modality whose responses concentrate in low- (or high-)
  gradient buckets is appearance- (or boundary-) dominated; a flat profile
  means both are covered.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
import numpy as np

from .correlation import CostVolume
from .errors import ConfigError


@dataclass
class ClusterReport:
    assignments: np.ndarray  # (N,) cluster id per token
    centroids: np.ndarray  # (K, C)
    sources: np.ndarray  # (N,) source label per token
    source_names: list[str]
    density: dict[str, np.ndarray]  # per source: fraction of tokens per cluster
    inertia: float
    inertia_history: list[float]  # per Lloyd iteration of the kept restart


@dataclass
class GradientHistogram:
    bin_edges: np.ndarray  # (bins + 1,)
    response: dict[str, np.ndarray]  # per source: mean max-response per bin
    counts: np.ndarray  # tokens per bin
    dispersion: dict[str, float]  # coefficient of variation across bins


def _kmeans_plus_plus(tokens: np.ndarray, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    n = len(tokens)
    centroids = [tokens[rng.integers(n)]]
    d2 = np.full(n, np.inf)
    for _ in range(k - 1):
        d2 = np.minimum(d2, ((tokens - centroids[-1]) ** 2).sum(axis=1))
        total = d2.sum()
        if total <= 0:
            centroids.append(tokens[rng.integers(n)])
            continue
        centroids.append(tokens[rng.choice(n, p=d2 / total)])
    return np.stack(centroids)


def _assign(tokens: np.ndarray, centroids: np.ndarray):
    d2 = ((tokens[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(tokens)), labels].sum()


def kmeans(tokens: np.ndarray, k: int, seed: int = 0, restarts: int = 20,
           max_iter: int = 100):
    """Lloyd iteration with k-means++ seeding; best inertia over restarts.

    Returns (assignments, centroids, inertia, inertia_history).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ConfigError("tokens must be (N, C)")
    if k < 1 or k > len(tokens):
        raise ConfigError(f"k={k} must be in [1, token count {len(tokens)}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centroids = _kmeans_plus_plus(tokens, k, rng)
        labels, inertia = _assign(tokens, centroids)
        history = [float(inertia)]
        for _ in range(max_iter):
            for c in range(k):
                member = labels == c
                if member.any():
                    centroids[c] = tokens[member].mean(axis=0)
                else:
                    # Re-seed an empty cluster at the worst-fit token.
                    d2 = ((tokens - centroids[labels]) ** 2).sum(axis=1)
                    centroids[c] = tokens[d2.argmax()]
            new_labels, inertia = _assign(tokens, centroids)
            history.append(float(inertia))
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        if best is None or history[-1] < best[2]:
            best = (labels, centroids.copy(), history[-1], history)
    return best


def kmeans_feature_analysis(x_fa, x_fb, x_ea, x_eb, k: int = 4,
                            seed: int = 0, restarts: int = 20) -> ClusterReport:
    """Cluster pooled per-position feature vectors from the four
    appearance/boundary maps and report per-modality cluster densities.

    Inputs are (C, H, W) or (B, C, H, W) arrays/tensors.
    """
    names = ["frame_appearance", "frame_boundary",
             "event_appearance", "event_boundary"]
    token_sets = [_tokens(m) for m in (x_fa, x_fb, x_ea, x_eb)]
    tokens = np.concatenate(token_sets)
    sources = np.concatenate([np.full(len(ts), i)
                              for i, ts in enumerate(token_sets)])
    labels, centroids, inertia, history = kmeans(tokens, k, seed, restarts)
    density = {}
    for i, name in enumerate(names):
        mine = labels[sources == i]
        density[name] = np.bincount(mine, minlength=k) / max(len(mine), 1)
    return ClusterReport(labels, centroids, sources, names, density,
                         inertia, history)


def _tokens(feature_map) -> np.ndarray:
    arr = np.asarray(getattr(feature_map, "detach", lambda: feature_map)(),
                     dtype=np.float64)
    if arr.ndim == 4:
        arr = np.moveaxis(arr, 1, -1).reshape(-1, arr.shape[1])
    elif arr.ndim == 3:
        arr = np.moveaxis(arr, 0, -1).reshape(-1, arr.shape[0])
    else:
        raise ConfigError("feature map must be (C, H, W) or (B, C, H, W)")
    return arr


def _max_response(cv: CostVolume) -> np.ndarray:
    level0 = cv.levels[0].detach().cpu().numpy()
    b, h, w = level0.shape[:3]
    return level0.reshape(b, h, w, -1).max(axis=-1).reshape(-1)


def _sobel_magnitude(image: np.ndarray) -> np.ndarray:
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 4.0
    pad = np.pad(image.astype(np.float64), 1, mode="edge")
    gx = np.zeros_like(image, dtype=np.float64)
    gy = np.zeros_like(gx)
    for dy in range(3):
        for dx in range(3):
            window = pad[dy:dy + image.shape[0], dx:dx + image.shape[1]]
            gx += kx[dy, dx] * window
            gy += kx.T[dy, dx] * window
    return np.hypot(gx, gy)


def gradient_response_histogram(frame, cv_frame: CostVolume,
                                cv_event: CostVolume, cv_fused: CostVolume,
                                bins: int = 10) -> GradientHistogram:
    """Bucket per-pixel max correlation responses by image gradient.

    ``frame`` is the first input frame, (H, W) or (B, H, W) in [0, 1]; the
    cost volumes live at 1/8 resolution, so the Sobel magnitude is averaged
    over 8x8 blocks to match.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[None]
    factor = frame.shape[-1] // cv_frame.shape[2]
    grads = []
    for img in frame:
        g = _sobel_magnitude(img)
        h, w = g.shape
        grads.append(g.reshape(h // factor, factor, w // factor,
                               factor).mean(axis=(1, 3)).reshape(-1))
    grad = np.concatenate(grads)

    edges = np.linspace(0.0, max(grad.max(), 1e-12), bins + 1)
    which = np.clip(np.digitize(grad, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)

    response = {}
    dispersion = {}
    for name, cv in (("frame", cv_frame), ("event", cv_event),
                     ("fused", cv_fused)):
        resp = _max_response(cv)
        if resp.shape != grad.shape:
            raise ConfigError("cost volume does not match the frame grid")
        means = np.zeros(bins)
        for b in range(bins):
            sel = which == b
            if sel.any():
                means[b] = resp[sel].mean()
        response[name] = means
        occupied = means[counts > 0]
        mean = occupied.mean() if len(occupied) else 0.0
        dispersion[name] = float(occupied.std() / mean) if mean else 0.0
    return GradientHistogram(edges, response, counts, dispersion)


def write_cluster_csv(path, report: ClusterReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cluster"] + report.source_names)
        k = len(report.centroids)
        for c in range(k):
            writer.writerow([c] + [f"{report.density[s][c]:.6f}"
                                   for s in report.source_names])


def write_histogram_csv(path, hist: GradientHistogram) -> None:
    names = sorted(hist.response)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_low", "bin_high", "count"] + names)
        for b in range(len(hist.counts)):
            writer.writerow([f"{hist.bin_edges[b]:.6f}",
                             f"{hist.bin_edges[b + 1]:.6f}",
                             int(hist.counts[b])]
                            + [f"{hist.response[n][b]:.6f}" for n in names])


def plot_histogram(path, hist: GradientHistogram) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, resp in sorted(hist.response.items()):
        ax.plot(centers, resp, marker="o", label=name)
    ax.set_xlabel("image gradient magnitude")
    ax.set_ylabel("mean max correlation response")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_clusters(path, report: ClusterReport) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(report.centroids)
    xs = np.arange(k)
    width = 0.8 / len(report.source_names)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, name in enumerate(report.source_names):
        ax.bar(xs + i * width, report.density[name], width, label=name)
    ax.set_xlabel("cluster")
    ax.set_ylabel("token fraction")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
