"""Training losses and evaluation metrics.

Losses operate on full-resolution flow in pixel units and are differentiable
with respect to the prediction:

* flow loss: per-pixel L1 (summed over the u, v channels, averaged over
  pixels) against ground truth.
* smoothness loss: forward-difference flow gradients, down-weighted by
  exp(-alpha * |forward-difference image gradient|) so flow edges aligned
  with image edges are cheap; normalized by the number of valid
  (position, direction) pairs.
* event consistency loss: per-pixel |E_t - E_{t+1} warped by the flow|
  using bilinear sampling, out-of-bounds samples excluded from the mean.

Metrics follow the usual flow-benchmark definitions: mean endpoint error,
and the outlier percentage (endpoint error > 3 px and > 5% of the
ground-truth magnitude).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError


@dataclass
class LossWeights:
    smooth_weight: float = 0.1  # weight of the smoothness term
    event_weight: float = 0.01  # weight of the event consistency term
    edge_alpha: float = 10.0  # boundary-aware down-weighting strength
    seq_decay: float = 0.8  # decay per step back from the latest prediction

    def validate(self) -> None:
        if min(self.smooth_weight, self.event_weight, self.edge_alpha,
               self.seq_decay) < 0:
            raise ConfigError("loss weights must be >= 0")


def _as_tensor(x, dtype=None) -> torch.Tensor:
    t = torch.as_tensor(x)
    return t.to(dtype) if dtype is not None else t


def flow_loss(f_hat, f_gt) -> torch.Tensor:
    """Mean over pixels of |du| + |dv|."""
    f_hat, f_gt = _as_tensor(f_hat), _as_tensor(f_gt)
    if f_hat.shape != f_gt.shape:
        raise ConfigError(f"flow shapes differ: {tuple(f_hat.shape)} vs "
                          f"{tuple(f_gt.shape)}")
    diff = (f_hat - f_gt).abs()
    # channel dim is 1 for (B, 2, H, W), or last for (H, W, 2)
    ch_dim = 1 if f_hat.ndim == 4 else -1
    return diff.sum(dim=ch_dim).mean()


def _luminance(image: torch.Tensor) -> torch.Tensor:
    if image.ndim >= 3 and image.shape[-3] == 3:
        r, g, b = image[..., 0, :, :], image[..., 1, :, :], image[..., 2, :, :]
        return 0.299 * r + 0.587 * g + 0.114 * b
    if image.ndim >= 3 and image.shape[-3] == 1:
        return image[..., 0, :, :]
    return image


def smoothness_loss(f_hat, image, alpha: float = 10.0) -> torch.Tensor:
    """Edge-aware first-order smoothness.

    f_hat: (B, 2, H, W) or (2, H, W) flow; image: matching (..., H, W) in
    [0, 1] (RGB accepted, converted to luminance).
    """
    f_hat = _as_tensor(f_hat)
    if f_hat.ndim == 3:
        f_hat = f_hat[None]
    img = _luminance(_as_tensor(image, f_hat.dtype))
    if img.ndim == 2:
        img = img[None]

    total = f_hat.new_zeros(())
    count = 0
    for axis in (-1, -2):
        if f_hat.shape[axis] < 2:
            continue
        dflow = torch.diff(f_hat, dim=axis)
        dimg = torch.diff(img, dim=axis)
        weight = torch.exp(-alpha * dimg.abs())
        total = total + (dflow.abs().sum(dim=1) * weight).sum()
        count += weight[0].numel()
    if count == 0:
        return total
    return total / (count * f_hat.shape[0])


def bilinear_sample(image: torch.Tensor, xs: torch.Tensor, ys: torch.Tensor):
    """Differentiable bilinear sampling of (B, H, W) images at float coords.

    Returns (values, valid) where valid marks samples fully inside the
    image bounds.
    """
    b, h, w = image.shape
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x0 = xs.floor().long().clamp(0, w - 1)
    y0 = ys.floor().long().clamp(0, h - 1)
    fx = (xs - x0).clamp(0, 1)
    fy = (ys - y0).clamp(0, 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    bi = torch.arange(b, device=image.device)[:, None, None].expand_as(x0)
    v00 = image[bi, y0, x0]
    v01 = image[bi, y0, x1]
    v10 = image[bi, y1, x0]
    v11 = image[bi, y1, x1]
    values = ((1 - fy) * (1 - fx) * v00 + (1 - fy) * fx * v01
              + fy * (1 - fx) * v10 + fy * fx * v11)
    return values, valid


def event_consistency_loss(f_hat, events_first, events_second) -> torch.Tensor:
    """Mean |E_t - E_{t+1}(x + u, y + v)| over in-bounds pixels.

    events_first/events_second: per-pixel event-count images (H, W) or
    (B, H, W); f_hat: matching flow in pixels.
    """
    f_hat = _as_tensor(f_hat)
    if f_hat.ndim == 3:
        f_hat = f_hat[None]
    e0 = _as_tensor(events_first, f_hat.dtype)
    e1 = _as_tensor(events_second, f_hat.dtype)
    if e0.ndim == 2:
        e0, e1 = e0[None], e1[None]
    b, h, w = e0.shape
    gy, gx = torch.meshgrid(torch.arange(h, dtype=f_hat.dtype),
                            torch.arange(w, dtype=f_hat.dtype), indexing="ij")
    xs = gx[None] + f_hat[:, 0]
    ys = gy[None] + f_hat[:, 1]
    warped, valid = bilinear_sample(e1, xs, ys)
    diff = (e0 - warped).abs() * valid
    denom = valid.sum()
    if denom == 0:
        return f_hat.new_zeros(())
    return diff.sum() / denom


def total_loss(predictions, f_gt, image, event_images,
               weights: LossWeights):
    """Decayed aggregate over a prediction sequence.

    predictions: iterable of flow tensors (earliest first); the latest
    carries weight 1 and each step back is multiplied by seq_decay.
    Returns (scalar, per-term breakdown dict).
    """
    weights.validate()
    preds = list(predictions)
    if not preds:
        raise ConfigError("empty prediction sequence")
    e0, e1 = event_images
    n = len(preds)
    agg_flow = agg_smooth = agg_event = None
    for i, pred in enumerate(preds):
        w = weights.seq_decay ** (n - 1 - i)
        lf = w * flow_loss(pred, f_gt)
        ls = w * smoothness_loss(pred, image, weights.edge_alpha)
        le = w * event_consistency_loss(pred, e0, e1)
        agg_flow = lf if agg_flow is None else agg_flow + lf
        agg_smooth = ls if agg_smooth is None else agg_smooth + ls
        agg_event = le if agg_event is None else agg_event + le
    total = (agg_flow + weights.smooth_weight * agg_smooth
             + weights.event_weight * agg_event)
    parts = {"loss/flow": agg_flow, "loss/smooth": agg_smooth,
             "loss/event": agg_event}
    return total, parts


def epe(f_hat, f_gt, valid_mask=None) -> float:
    """Mean endpoint error over valid pixels."""
    f_hat = _as_tensor(f_hat, torch.float64)
    f_gt = _as_tensor(f_gt, torch.float64)
    err = _pixel_epe(f_hat, f_gt)
    mask = _resolve_mask(valid_mask, err.shape)
    if mask.sum() == 0:
        raise ConfigError("empty valid mask")
    return float(err[mask].mean())


def fl_all(f_hat, f_gt, valid_mask=None) -> float:
    """Outlier percentage: endpoint error > 3 px and > 5% of |f_gt|."""
    f_hat = _as_tensor(f_hat, torch.float64)
    f_gt = _as_tensor(f_gt, torch.float64)
    err = _pixel_epe(f_hat, f_gt)
    mag = _pixel_epe(f_gt, torch.zeros_like(f_gt))
    mask = _resolve_mask(valid_mask, err.shape)
    if mask.sum() == 0:
        raise ConfigError("empty valid mask")
    outlier = (err > 3.0) & (err > 0.05 * mag)
    return float(100.0 * outlier[mask].double().mean())


def _pixel_epe(f_hat: torch.Tensor, f_gt: torch.Tensor) -> torch.Tensor:
    diff = f_hat - f_gt
    ch_dim = 1 if diff.ndim == 4 else -1
    return diff.pow(2).sum(dim=ch_dim).sqrt()


def _resolve_mask(valid_mask, shape) -> torch.Tensor:
    if valid_mask is None:
        return torch.ones(shape, dtype=torch.bool)
    mask = _as_tensor(valid_mask).bool()
    if mask.shape != shape:
        raise ConfigError(f"mask shape {tuple(mask.shape)} != error shape "
                          f"{tuple(shape)}")
    return mask
