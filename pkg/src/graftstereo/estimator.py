"""Estimator-style facade over the staged pipeline.

GraftStereoMatcher follows the fit/predict/transform convention (duck-typed
get_params/set_params, no framework import): fit runs base training on a
list of stereo samples, predict maps pairs to disparity arrays, transform
exposes the learned quarter-resolution features, and score returns negative
mean EPE so that larger is better.
"""

from __future__ import annotations

import numpy as np

from .bench import epe
from .errors import ConfigError, EmptyDataset, ShapeMismatch
from .heads import DisparityMap
from .nets import NetDesc, feature_forward, init_params
from .pipeline import PipelineConfig, StereoSample, run_inference, train_stage
from .tensor import Tensor


def _as_sample(item) -> StereoSample:
    if isinstance(item, StereoSample):
        return item
    if isinstance(item, (tuple, list)) and len(item) in (2, 3):
        left, right = item[0], item[1]
        gt = item[2] if len(item) == 3 else None
        left = left if isinstance(left, Tensor) else Tensor(np.asarray(left)[None])
        right = right if isinstance(right, Tensor) else Tensor(np.asarray(right)[None])
        if gt is not None and not isinstance(gt, DisparityMap):
            gt = DisparityMap(Tensor(np.asarray(gt, dtype=np.float32)))
        return StereoSample(left, right, gt)
    raise ShapeMismatch(
        "expected a StereoSample or a (left, right[, gt]) tuple")


def _check_pairs(X, need_gt: bool) -> list:
    if not X:
        raise EmptyDataset("no samples given")
    samples = [_as_sample(x) for x in X]
    shape = samples[0].left.shape
    for s in samples:
        if s.left.shape != s.right.shape:
            raise ShapeMismatch(
                f"left {s.left.shape} vs right {s.right.shape}")
        if s.left.shape != shape:
            raise ShapeMismatch(
                f"mixed sample shapes {shape} vs {s.left.shape}")
        if need_gt and s.gt is None:
            raise ConfigError("fit requires ground-truth disparity per sample")
    return samples


class GraftStereoMatcher:
    """Trainable stereo matcher with an interchangeable cost space."""

    def __init__(self, method: str = "cosine", d_max: int = 12,
                 feature_width: int = 8, feature_channels: int = 8,
                 aggregator_width: int = 8, epochs: int = None,
                 lr: float = 1e-3, temperature: float = 1.0, b: float = 1.0,
                 mu: float = 0.1, seed: int = 0):
        self.method = method
        self.d_max = d_max
        self.feature_width = feature_width
        self.feature_channels = feature_channels
        self.aggregator_width = aggregator_width
        self.epochs = epochs
        self.lr = lr
        self.temperature = temperature
        self.b = b
        self.mu = mu
        self.seed = seed

    # -- parameter protocol -------------------------------------------------

    _param_names = ("method", "d_max", "feature_width", "feature_channels",
                    "aggregator_width", "epochs", "lr", "temperature", "b",
                    "mu", "seed")

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._param_names}

    def set_params(self, **params) -> "GraftStereoMatcher":
        for k, v in params.items():
            if k not in self._param_names:
                raise ConfigError(
                    f"invalid parameter {k!r} for GraftStereoMatcher")
            setattr(self, k, v)
        return self

    # -- workflow -----------------------------------------------------------

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            method=self.method, d_max=self.d_max, temperature=self.temperature,
            b=self.b, mu=self.mu, stage="base", lr=self.lr, epochs=self.epochs,
            seed=self.seed, feature=self.nets_["feature"],
            aggregator=self.nets_["aggregator"])

    def fit(self, X, y=None) -> "GraftStereoMatcher":
        """Base-train feature extractor and aggregator on ground-truth pairs.

        X is a list of StereoSample or (left, right, gt) tuples; y is ignored
        (supervision rides inside the samples).
        """
        samples = _check_pairs(X, need_gt=True)
        in_ch = samples[0].left.shape[0]
        feature = init_params(
            NetDesc("feature", in_ch, self.feature_width, self.feature_channels),
            self.seed)
        k = 1 if self.method in ("cosine", "l2") else 2 * self.feature_channels
        aggregator = init_params(
            NetDesc("aggregator", k, self.aggregator_width, 1), self.seed + 1)
        cfg = PipelineConfig(
            method=self.method, d_max=self.d_max, temperature=self.temperature,
            b=self.b, mu=self.mu, stage="base", lr=self.lr, epochs=self.epochs,
            seed=self.seed, feature=feature, aggregator=aggregator)
        nets, trace = train_stage(cfg, samples)
        self.nets_ = nets
        self.loss_trace_ = trace
        return self

    def _check_fitted(self):
        if not hasattr(self, "nets_"):
            raise ConfigError("matcher is not fitted; call fit first")

    def predict(self, X) -> list:
        """Disparity arrays [H,W] (float32, full resolution) per pair."""
        self._check_fitted()
        cfg = self._config()
        return [run_inference(cfg, s).data.array
                for s in _check_pairs(X, need_gt=False)]

    def transform(self, X) -> list:
        """Learned quarter-resolution features as (left, right) array pairs."""
        self._check_fitted()
        out = []
        for s in _check_pairs(X, need_gt=False):
            lf = feature_forward(self.nets_["feature"], s.left)
            rf = feature_forward(self.nets_["feature"], s.right)
            out.append((lf.data.array, rf.data.array))
        return out

    def fit_transform(self, X, y=None) -> list:
        return self.fit(X, y).transform(X)

    def score(self, X, y=None) -> float:
        """Negative mean EPE over samples carrying ground truth."""
        self._check_fitted()
        samples = _check_pairs(X, need_gt=True)
        cfg = self._config()
        vals = [epe(run_inference(cfg, s), s.gt) for s in samples]
        return -float(np.mean(vals))
