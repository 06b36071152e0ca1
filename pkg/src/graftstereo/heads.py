"""Disparity distributions, regression, and the training losses.

Scores over hypotheses turn into per-pixel distributions by a tempered
softmax restricted to in-frame hypotheses, then collapse to a disparity by
weighted average. Supervision pairs a soft Laplacian target with cross
entropy, plus a smooth-L1 term on the regressed value; the combined loss
weights each output head and scales the regression term by mu.
"""

from __future__ import annotations

import numpy as np

from .errors import (DisparityOutOfRange, EmptyMask, NonPositiveScale,
                     NonPositiveTemperature, ShapeMismatch)
from .tensor import Tensor

EPS_LOG = 1e-12


class ProbVolume:
    """Per-pixel distribution over disparity hypotheses, [D,H,W]."""

    __slots__ = ("data",)

    def __init__(self, data: Tensor):
        if data.ndim != 3:
            raise ShapeMismatch(f"probability volume must be [D,H,W], got {data.shape}")
        self.data = data

    @property
    def hypotheses(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        return f"ProbVolume(shape={self.data.shape})"


class DisparityMap:
    """Disparity values in pixels, [H,W], with a per-pixel validity mask."""

    __slots__ = ("data", "mask")

    def __init__(self, data: Tensor, mask=None):
        if data.ndim != 2:
            raise ShapeMismatch(f"disparity map must be [H,W], got {data.shape}")
        if mask is None:
            mask = np.ones(data.shape, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != data.shape:
                raise ShapeMismatch(
                    f"mask {mask.shape} does not match map {data.shape}")
        self.data = data
        self.mask = mask

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"DisparityMap(shape={self.shape}, valid={int(self.mask.sum())})"


def softmax_over_disparity(scores: Tensor, temperature: float = 1.0,
                           valid=None) -> ProbVolume:
    """Tempered softmax over the hypothesis axis of [D,H,W] scores.

    Invalid hypotheses are treated as score negative infinity and receive
    zero mass; d=0 is always in frame, so every pixel keeps at least one
    valid hypothesis.
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    if scores.ndim != 3:
        raise ShapeMismatch(f"scores must be [D,H,W], got {scores.shape}")
    z = scores.array / np.float32(temperature)
    if valid is not None:
        z = np.where(valid, z, np.float32(-np.inf))
    m = z.max(axis=0, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=0, keepdims=True)
    return ProbVolume(Tensor(p, copy=False))


def regress_disparity(p: ProbVolume) -> DisparityMap:
    """Weighted average over hypotheses: D(x,y) = sum_d d * p(d,x,y)."""
    d = np.arange(p.hypotheses, dtype=np.float64)
    out = np.einsum("dhw,d->hw", p.data.array, d, dtype=np.float64)
    return DisparityMap(Tensor(out.astype(np.float32), copy=False))


def laplacian_target(gt: DisparityMap, b: float, d_max: int) -> ProbVolume:
    """Soft target distribution P(d) proportional to exp(-|d - D| / b).

    Normalized over d in 0..d_max per pixel. Pixels outside gt.mask get a
    uniform placeholder; they carry no supervision and callers exclude them
    through the mask.
    """
    if b <= 0:
        raise NonPositiveScale(f"laplacian scale b must be > 0, got {b}")
    gv = gt.data.array
    masked = gv[gt.mask]
    if masked.size and (masked.min() < 0 or masked.max() > d_max):
        raise DisparityOutOfRange(
            f"ground truth spans [{masked.min()}, {masked.max()}], "
            f"outside [0, {d_max}]")
    d = np.arange(d_max + 1, dtype=np.float64)[:, None, None]
    w = np.exp(-np.abs(d - gv[None].astype(np.float64)) / b)
    p = w / w.sum(axis=0, keepdims=True)
    p[:, ~gt.mask] = 1.0 / (d_max + 1)
    return ProbVolume(Tensor(p.astype(np.float32), copy=False))


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeMismatch(f"mask {mask.shape} does not match {shape}")
    if not mask.any():
        raise EmptyMask("no pixels selected")
    return mask


def cross_entropy_loss(pred: ProbVolume, target: ProbVolume, mask,
                       eps_log: float = EPS_LOG, swap_log: bool = False) -> float:
    """Mean over masked pixels of sum_d -target(d) * log(pred(d) + eps_log).

    swap_log=True evaluates the transposed form -pred(d) * log(target(d) +
    eps_log) instead; the default orientation is the one minimized by
    pred == target.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch(
            f"pred {pred.data.shape} and target {target.data.shape} differ")
    mask = _check_mask(mask, pred.data.shape[1:])
    p = pred.data.array.astype(np.float64)
    t = target.data.array.astype(np.float64)
    if swap_log:
        p, t = t, p
    per_pixel = -(t * np.log(p + eps_log)).sum(axis=0)
    return float(per_pixel[mask].mean())


def smooth_l1_loss(pred: DisparityMap, gt: DisparityMap, mask) -> float:
    """Mean over masked pixels of 0.5 e^2 below 1 px error, |e| - 0.5 above."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} and gt {gt.shape} differ")
    mask = _check_mask(mask, pred.shape)
    e = (pred.data.array.astype(np.float64) - gt.data.array.astype(np.float64))[mask]
    ae = np.abs(e)
    return float(np.where(ae < 1, 0.5 * e * e, ae - 0.5).mean())


def total_loss(outputs, targets, lambdas, mu: float, mask) -> float:
    """Weighted sum over output heads: sum_m lambda_m * (ce_m + mu * sl1_m).

    outputs is a list of (ProbVolume, DisparityMap) per head; targets is the
    shared (ProbVolume, DisparityMap) supervision pair.
    """
    if len(outputs) != len(lambdas) or not outputs:
        raise ShapeMismatch(
            f"{len(outputs)} outputs vs {len(lambdas)} lambdas (need equal, >= 1)")
    target_p, target_d = targets
    total = 0.0
    for (p, dmap), lam in zip(outputs, lambdas):
        ce = cross_entropy_loss(p, target_p, mask)
        sl1 = smooth_l1_loss(dmap, target_d, mask)
        total += lam * (ce + mu * sl1)
    return float(total)
