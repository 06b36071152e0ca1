"""Matching-cost volumes over disparity hypotheses.

Four construction manners: cosine similarity, L2 distance, channel
concatenation, and concatenation of normalized features. Cosine and L2
collapse any feature width to one scalar per hypothesis, which is what lets
downstream aggregation accept feature sources of different channel counts.

A hypothesis (d, x, y) compares the left pixel (x, y) with the right pixel
(x - d, y). Where x - d falls off frame the validity mask is cleared and the
slot holds the method's worst value: -1 for cosine, twice the largest valid
distance for L2, zeros for the concatenations.
"""

from __future__ import annotations

import numpy as np

from .errors import DisparityOutOfRange, ShapeMismatch
from .tensor import Tensor, l2norm_fwd

COST_METHODS = ("cosine", "l2", "concat", "nconcat")


class FeatureMap:
    """Per-image feature grid [C,H,W]."""

    __slots__ = ("data",)

    def __init__(self, data: Tensor):
        if data.ndim != 3:
            raise ShapeMismatch(f"feature map must be [C,H,W], got {data.shape}")
        self.data = data

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __repr__(self):
        return f"FeatureMap(shape={self.data.shape})"


class CostVolume:
    """Stack of matching costs [K,D,H,W] plus the in-frame validity mask."""

    __slots__ = ("data", "valid", "method", "d_max")

    def __init__(self, data: Tensor, valid: np.ndarray, method: str, d_max: int):
        if data.ndim != 4:
            raise ShapeMismatch(f"cost volume must be [K,D,H,W], got {data.shape}")
        if valid.shape != data.shape[1:]:
            raise ShapeMismatch(
                f"valid mask {valid.shape} does not match volume {data.shape[1:]}")
        if data.shape[1] != d_max + 1:
            raise ShapeMismatch(
                f"volume has {data.shape[1]} hypotheses, expected d_max+1 = {d_max + 1}")
        self.data = data
        self.valid = valid
        self.method = method
        self.d_max = d_max

    @property
    def k(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        return f"CostVolume(method={self.method}, shape={self.data.shape})"


def hypothesis_mask(d_max: int, h: int, w: int) -> np.ndarray:
    """valid[d, y, x] is True where the right-image sample x-d is in frame."""
    d = np.arange(d_max + 1)[:, None, None]
    x = np.arange(w)[None, None, :]
    return np.broadcast_to(x >= d, (d_max + 1, h, w)).copy()


def _check_pair(left: FeatureMap, right: FeatureMap, d_max: int, eps: float):
    if left.data.shape != right.data.shape:
        raise ShapeMismatch(
            f"left {left.data.shape} and right {right.data.shape} differ")
    if not 0 <= d_max < left.width:
        raise DisparityOutOfRange(
            f"d_max {d_max} outside [0, {left.width - 1}] for width {left.width}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")


def build_cost(left: FeatureMap, right: FeatureMap, d_max: int, method: str,
               eps: float = 1e-8, squared: bool = False) -> CostVolume:
    """Construct the cost volume for one rectified pair.

    method selects the manner: "cosine" scores each hypothesis with
    <l, r> / (max(|l|, eps) * max(|r|, eps)), "l2" with the euclidean
    distance (squared=True for the squared variant), "concat" stacks the
    raw channel vectors [l; r_shifted], "nconcat" stacks them after
    per-pixel normalization. K is 1 for the scalar methods and 2C for the
    concatenations. Disparities run over 0..d_max inclusive.
    """
    _check_pair(left, right, d_max, eps)
    method = method.lower()
    if method not in COST_METHODS:
        raise ValueError(f"unknown cost method {method!r}, want one of {COST_METHODS}")
    la, ra = left.data.array, right.data.array
    c, h, w = la.shape
    valid = hypothesis_mask(d_max, h, w)

    if method == "cosine":
        ln = l2norm_fwd(la, eps)[0]
        rn = l2norm_fwd(ra, eps)[0]
        out = np.full((1, d_max + 1, h, w), -1.0, dtype=np.float32)
        for d in range(d_max + 1):
            dot = np.einsum("chw,chw->hw", ln[:, :, d:], rn[:, :, :w - d],
                            dtype=np.float64)
            out[0, d, :, d:] = np.clip(dot, -1.0, 1.0)
        return CostVolume(Tensor(out, copy=False), valid, method, d_max)

    if method == "l2":
        dist = np.zeros((d_max + 1, h, w), dtype=np.float32)
        for d in range(d_max + 1):
            diff = la[:, :, d:] - ra[:, :, :w - d]
            sq = np.einsum("chw,chw->hw", diff, diff, dtype=np.float64)
            dist[d, :, d:] = sq if squared else np.sqrt(sq)
        if not valid.all():
            dist[~valid] = 2 * dist[valid].max()
        return CostVolume(Tensor(dist[None], copy=False), valid, method, d_max)

    if method == "nconcat":
        la = l2norm_fwd(la, eps)[0]
        ra = l2norm_fwd(ra, eps)[0]
    out = np.zeros((2 * c, d_max + 1, h, w), dtype=np.float32)
    for d in range(d_max + 1):
        out[:c, d, :, d:] = la[:, :, d:]
        out[c:, d, :, d:] = ra[:, :, :w - d]
    return CostVolume(Tensor(out, copy=False), valid, method, d_max)
