"""Synthetic stereo pairs, evaluation metrics, and brute-force oracles.

Pairs are random-dot stereograms: the right image is random texture and the
left is built by left(x, y) = right(x - D(x, y), y) for a known disparity
field D, so ground truth is exact by construction. The mask clears pixels
whose correspondence is out of frame and pixels occluded under the field
(where several left pixels land on one right pixel, the larger disparity
is the visible one).

The matching oracle is windowed zero-normalized cross-correlation with an
exhaustive argmax over hypotheses; slow, simple, and independent of every
learned component.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .cost import CostVolume, FeatureMap
from .errors import ConfigError, EmptyMask, ShapeMismatch
from .heads import DisparityMap
from .io import read_pfm, read_pgm, write_pfm, write_pgm
from .nets import NetDesc, init_params
from .pipeline import PipelineConfig, StereoSample
from .tensor import Tensor

FIELD_KINDS = ("constant", "two_plane", "slanted")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one random-dot pair.

    field selects the disparity surface: ("constant", d), ("two_plane",
    d_near_left, d_far_right, split_column), or ("slanted", a, b, c) for
    D = a*x + b*y + c rounded to the nearest integer. density is the dot
    fraction, noise the sigma of gaussian noise added to the left image.
    """

    height: int
    width: int
    field: tuple = ("constant", 3)
    density: float = 0.5
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.field[0] not in FIELD_KINDS:
            raise ConfigError(f"unknown disparity field {self.field[0]!r}")
        if not 0 < self.density <= 1:
            raise ConfigError(f"density must be in (0, 1], got {self.density}")
        if self.noise < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise}")


def disparity_field(spec: SyntheticSpec) -> np.ndarray:
    """Integer disparity per left-image pixel, [H,W]."""
    h, w = spec.height, spec.width
    kind = spec.field[0]
    if kind == "constant":
        d = np.full((h, w), int(spec.field[1]))
    elif kind == "two_plane":
        d1, d2, split = int(spec.field[1]), int(spec.field[2]), int(spec.field[3])
        d = np.full((h, w), d1)
        d[:, split:] = d2
    else:
        a, b, c = (float(v) for v in spec.field[1:4])
        x = np.arange(w)[None, :]
        y = np.arange(h)[:, None]
        d = np.rint(a * x + b * y + c).astype(int)
    if d.min() < 0 or d.max() >= w:
        raise ConfigError(
            f"field produces disparities [{d.min()}, {d.max()}] "
            f"outside 0..{w - 1}")
    return d


def gen_pair(spec: SyntheticSpec, sample_id: str = "") -> StereoSample:
    """Random-dot pair warped by the spec's disparity field."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    right = (rng.random((h, w)) < spec.density).astype(np.float32)
    d = disparity_field(spec)

    xs = np.arange(w)[None, :]
    src = xs - d
    in_frame = src >= 0
    left = np.where(in_frame, right[np.arange(h)[:, None], np.clip(src, 0, w - 1)],
                    0.0).astype(np.float32)
    # out-of-frame pixels get fresh texture so they are not trivially black
    fresh = (rng.random((h, w)) < spec.density).astype(np.float32)
    left[~in_frame] = fresh[~in_frame]

    # z-buffer per scanline: of all left pixels mapping to one right pixel,
    # only the largest disparity is visible
    visible = np.zeros((h, w), dtype=bool)
    for y in range(h):
        best = np.full(w, -1)
        for x in range(w):
            s = src[y, x]
            if s >= 0 and d[y, x] > best[s]:
                best[s] = d[y, x]
        for x in range(w):
            s = src[y, x]
            visible[y, x] = s >= 0 and d[y, x] == best[s]

    if spec.noise > 0:
        left = left + rng.normal(0.0, spec.noise, (h, w)).astype(np.float32)

    gt = DisparityMap(Tensor(d.astype(np.float32)), mask=in_frame & visible)
    return StereoSample(Tensor(left[None]), Tensor(right[None]), gt,
                        sample_id=sample_id)


# ---------------------------------------------------------------------------
# metrics


def _joint_mask(pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    m = pred.mask & gt.mask
    if not m.any():
        raise EmptyMask("no jointly valid pixels")
    return m


def epe(pred: DisparityMap, gt: DisparityMap) -> float:
    """Mean absolute disparity error over the intersected masks."""
    m = _joint_mask(pred, gt)
    diff = pred.data.array.astype(np.float64) - gt.data.array.astype(np.float64)
    return float(np.abs(diff[m]).mean())


def error_rate(pred: DisparityMap, gt: DisparityMap, tau: float) -> float:
    """Fraction of jointly valid pixels with error strictly larger than tau."""
    m = _joint_mask(pred, gt)
    diff = pred.data.array.astype(np.float64) - gt.data.array.astype(np.float64)
    return float((np.abs(diff[m]) > tau).mean())


# ---------------------------------------------------------------------------
# brute-force oracles


def _window_sums(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window centered at each pixel (full windows only).

    Output [H-2r, W-2r] indexed by window center minus r.
    """
    c = np.cumsum(np.cumsum(a, axis=0, dtype=np.float64), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    k = 2 * r + 1
    return (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k])


def zncc_oracle(left_img: Tensor, right_img: Tensor, window: int,
                d_max: int) -> DisparityMap:
    """Exhaustive per-pixel argmax of windowed ZNCC between left and right.

    Pixels without a full window, without any in-frame hypothesis window,
    or with zero texture variance are masked out. window must be odd.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be odd and >= 1, got {window}")
    la = left_img.array[0] if left_img.ndim == 3 else left_img.array
    ra = right_img.array[0] if right_img.ndim == 3 else right_img.array
    if la.shape != ra.shape:
        raise ShapeMismatch(f"left {la.shape} vs right {ra.shape}")
    h, w = la.shape
    r = window // 2
    n = window * window
    if h < window or w < window:
        raise ShapeMismatch(f"{h}x{w} image smaller than window {window}")

    ls = _window_sums(la, r)
    lss = _window_sums(la * la, r)
    lvar = lss - ls * ls / n
    rs = _window_sums(ra, r)
    rss = _window_sums(ra * ra, r)
    rvar = rss - rs * rs / n

    hi, wi = ls.shape  # interior grid, offset by r
    best = np.full((hi, wi), -np.inf)
    arg = np.zeros((hi, wi), dtype=np.float32)
    found = np.zeros((hi, wi), dtype=bool)
    for d in range(min(d_max, w - window) + 1):
        cross = _window_sums(la[:, d:] * ra[:, :w - d], r)
        cov = cross - ls[:, d:] * rs[:, :wi - d] / n
        var = lvar[:, d:] * rvar[:, :wi - d]
        ok = var > 1e-12
        score = np.where(ok, cov / np.sqrt(np.maximum(var, 1e-12)), -np.inf)
        sub = best[:, d:]
        better = ok & (score > sub)
        sub[better] = score[better]
        arg[:, d:][better] = d
        found[:, d:] |= ok

    out = np.zeros((h, w), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    out[r:h - r, r:w - r] = arg
    mask[r:h - r, r:w - r] = found
    return DisparityMap(Tensor(out), mask=mask)


def patch_feature_map(img: Tensor, radius: int) -> FeatureMap:
    """Lift an image to per-pixel zero-meaned window features.

    Channel c holds one window offset, shifted so each pixel's channel
    vector is its (2r+1)^2 neighborhood minus the neighborhood mean; the
    cosine similarity of two such vectors is exactly their windowed ZNCC.
    Border pixels without a full window get zero vectors.
    """
    a = img.array[0] if img.ndim == 3 else img.array
    h, w = a.shape
    k = 2 * radius + 1
    if h < k or w < k:
        raise ShapeMismatch(f"{h}x{w} image smaller than window {k}")
    win = np.lib.stride_tricks.sliding_window_view(a, (k, k))  # [h-2r, w-2r, k, k]
    feats = win.reshape(h - 2 * radius, w - 2 * radius, k * k).astype(np.float64)
    feats = feats - feats.mean(axis=2, keepdims=True)
    out = np.zeros((k * k, h, w), dtype=np.float32)
    out[:, radius:h - radius, radius:w - radius] = feats.transpose(2, 0, 1)
    return FeatureMap(Tensor(out, copy=False))


def box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Per-channel box blur of [C,H,W] with edge padding, same size.

    Used to degrade feature maps into a stand-in for a generic low-level
    feature source.
    """
    if radius < 1:
        return a.copy()
    c, h, w = a.shape
    k = 2 * radius + 1
    ap = np.pad(a, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    out = np.zeros_like(a, dtype=np.float32)
    for dy in range(k):
        for dx in range(k):
            out += ap[:, dy:dy + h, dx:dx + w]
    out /= k * k
    return out


def cost_argmax(cv: CostVolume) -> DisparityMap:
    """Winner-take-all disparity from a scalar cost volume.

    Maximizes cosine similarity, minimizes L2 distance; concatenation
    volumes carry no scalar score to rank.
    """
    if cv.method not in ("cosine", "l2"):
        raise ConfigError(f"argmax undefined for method {cv.method!r}")
    a = cv.data.array[0].astype(np.float64)
    score = -a if cv.method == "l2" else a
    score = np.where(cv.valid, score, -np.inf)
    arg = score.argmax(axis=0).astype(np.float32)
    return DisparityMap(Tensor(arg))


# ---------------------------------------------------------------------------
# gradient-check fixtures


def grad_check_setup(variant: str, method: str, seed: int = 3):
    """Small full-pipeline config and sample for the finite-difference check.

    variant is an adaptor architecture or "none". Widths are chosen to keep
    the parameter count low enough for an exhaustive check while exercising
    feature extractor, adaptor, cost construction, aggregation, resampling,
    and both loss terms; the supervision mask has deliberate holes.
    """
    ushape = variant == "ushape"
    h, w = (16, 32) if ushape else (8, 16)
    spec = SyntheticSpec(h, w, field=("two_plane", 1, 3, w // 2),
                         density=0.5, noise=0.05, seed=seed)
    sample = gen_pair(spec, sample_id="check")
    rng = np.random.default_rng(seed + 1)
    holes = rng.random(sample.gt.mask.shape) < 0.3
    sample.gt.mask &= ~holes

    c = 4
    feature = init_params(NetDesc("feature", 1, 2, c), seed)
    adaptor = None
    if variant != "none":
        width = 2 if ushape else 4
        adaptor = init_params(NetDesc("adaptor", c, width, c, variant=variant),
                              seed + 2)
    k = 1 if method in ("cosine", "l2") else 2 * c
    aggregator = init_params(NetDesc("aggregator", k, 4, 1), seed + 3)
    cfg = PipelineConfig(method=method, d_max=4, stage="base",
                         feature=feature, adaptor=adaptor,
                         aggregator=aggregator, seed=seed)
    return cfg, sample


# ---------------------------------------------------------------------------
# dataset files: {id}_left.pgm, {id}_right.pgm, {id}_gt.pfm, {id}_mask.pgm


def save_dataset(samples, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for s in samples:
        if not s.sample_id:
            raise ConfigError("samples need ids to be saved")
        base = os.path.join(directory, s.sample_id)
        write_pgm(s.left, f"{base}_left.pgm")
        write_pgm(s.right, f"{base}_right.pgm")
        write_pfm(s.gt, f"{base}_gt.pfm")
        write_pgm(s.gt.mask.astype(np.float32), f"{base}_mask.pgm")


def load_dataset(directory: str) -> list:
    """Samples sorted by id; gt mask intersects the PFM's finite pixels."""
    ids = sorted(m.group(1) for m in
                 (re.match(r"^(.+)_left\.pgm$", f) for f in os.listdir(directory))
                 if m)
    if not ids:
        raise ConfigError(f"{directory}: no samples found")
    out = []
    for sid in ids:
        base = os.path.join(directory, sid)
        left = read_pgm(f"{base}_left.pgm")
        right = read_pgm(f"{base}_right.pgm")
        gt = read_pfm(f"{base}_gt.pfm")
        saved_mask = read_pgm(f"{base}_mask.pgm").array[0] > 0.5
        gt = DisparityMap(gt.data, mask=gt.mask & saved_mask)
        out.append(StereoSample(left, right, gt, sample_id=sid))
    return out
