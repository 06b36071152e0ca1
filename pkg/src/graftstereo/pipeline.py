"""Staged workflow: train a base, graft a feature source, adapt, retrain.

The matching nets run at quarter resolution (features are H/4 x W/4, the
cost volume searches d_max/4 hypotheses), and score volumes are resampled
back to full resolution before the softmax, so supervision and evaluation
happen in full-resolution pixels. d_max is therefore a full-resolution
disparity and must be divisible by 4 whenever a feature net or external
features are in play. Without either (classical mode) the image itself acts
as a 1-channel feature map at full resolution.

Stages and their frozen sets:
    base     train feature extractor + aggregator jointly (cosine or any
             other cost manner)
    graft    no training at all; combine trained parts into a runnable
             config, everything frozen
    adapt    train the adaptor only; feature source and aggregator frozen
    retrain  train the aggregator only (freshly initialized unless resume);
             feature source and adaptor frozen
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .cost import COST_METHODS, FeatureMap, hypothesis_mask
from .errors import (ChannelMismatch, ConfigError, DisparityOutOfRange,
                     DivergenceDetected, EmptyDataset)
from .heads import DisparityMap
from .io import read_tensor
from .nets import (NetParams, adaptor_graph, aggregator_graph, collect_grad,
                   feature_graph, init_params, load_params, param_nodes,
                   save_params)
from .tensor import Tensor

STAGES = ("base", "graft", "adapt", "retrain")
STAGE_EPOCHS = {"base": 8, "adapt": 1, "retrain": 10}
CLASSICAL_TEMPERATURE = 0.05


@dataclass
class StereoSample:
    """One rectified pair with ground truth; features attach when external."""

    left: Tensor
    right: Tensor
    gt: DisparityMap
    sample_id: str = ""
    left_feat: FeatureMap = None
    right_feat: FeatureMap = None


@dataclass
class PipelineConfig:
    method: str = "cosine"
    d_max: int = 12
    temperature: float = 1.0
    b: float = 1.0
    mu: float = 0.1
    lambdas: tuple = (1.0,)
    squared_l2: bool = False
    stage: str = "base"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = None
    seed: int = 0
    feature: NetParams = None
    feature_dir: str = None
    adaptor: NetParams = None
    aggregator: NetParams = None
    resume: bool = False
    joint: bool = False

    def __post_init__(self):
        if self.method not in COST_METHODS:
            raise ConfigError(f"unknown cost method {self.method!r}")
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.feature is not None and self.feature_dir is not None:
            raise ConfigError("feature source is either learned or external, not both")
        if self.quarter_res and self.d_max % 4:
            raise ConfigError(
                f"d_max must be divisible by 4 at quarter resolution, got {self.d_max}")

    @property
    def quarter_res(self) -> bool:
        return self.feature is not None or self.feature_dir is not None

    def stage_epochs(self) -> int:
        return self.epochs if self.epochs is not None else STAGE_EPOCHS[self.stage]


# ---------------------------------------------------------------------------
# supervision targets


def training_target(gt: DisparityMap, b: float, d_max: int):
    """Laplacian target restricted to in-frame hypotheses, plus the loss mask.

    The plain Laplacian spreads mass over all of 0..d_max; hypotheses with
    x - d < 0 get zero predicted probability, so leaving target mass there
    would put an irreducible floor under the cross entropy. The target is
    therefore renormalized over valid hypotheses. Pixels whose ground truth
    cannot be expressed (gt > x or gt > d_max) drop out of the mask.
    """
    gv = gt.data.array.astype(np.float64)
    h, w = gv.shape
    d = np.arange(d_max + 1, dtype=np.float64)[:, None, None]
    t = np.exp(-np.abs(d - gv[None]) / b)
    valid = hypothesis_mask(d_max, h, w)
    t[~valid] = 0.0
    t /= t.sum(axis=0, keepdims=True)
    x = np.arange(w, dtype=np.float64)[None, :]
    mask = gt.mask & (gv >= 0) & (gv <= d_max) & (gv <= x)
    return t.astype(np.float32), mask


# ---------------------------------------------------------------------------
# graph assembly


def _net_nodes(cfg: PipelineConfig, flats=None):
    nodes = {}
    for name in ("feature", "adaptor", "aggregator"):
        p = getattr(cfg, name)
        if p is not None:
            nodes[name] = param_nodes(p, None if flats is None else flats[name])
    return nodes


def _cost_node(cfg: PipelineConfig, lf: ad.Node, rf: ad.Node, qd: int) -> ad.Node:
    if cfg.method == "cosine":
        ln = ad.l2norm_channels(lf, 1e-8)
        rn = ad.l2norm_channels(rf, 1e-8)
        vol = ad.shifted_dot(ln, rn, qd, fill=-1.0)
        return ad.reshape(vol, (1,) + vol.value.shape)
    if cfg.method == "l2":
        vol = ad.l2_distance_volume(lf, rf, qd, squared=cfg.squared_l2)
        return ad.reshape(vol, (1,) + vol.value.shape)
    if cfg.method == "nconcat":
        lf = ad.l2norm_channels(lf, 1e-8)
        rf = ad.l2norm_channels(rf, 1e-8)
    return ad.concat_volume(lf, rf, qd)


def forward_graph(cfg: PipelineConfig, sample: StereoSample, nodes: dict):
    """Probability volume and regressed disparity nodes at full resolution."""
    if cfg.feature is not None:
        lf = feature_graph(nodes["feature"], ad.const(sample.left.array))
        rf = feature_graph(nodes["feature"], ad.const(sample.right.array))
        full_h, full_w = sample.left.shape[1:]
    elif cfg.feature_dir is not None or sample.left_feat is not None:
        if sample.left_feat is None or sample.right_feat is None:
            raise ConfigError(
                f"sample {sample.sample_id!r} carries no external features")
        lf = ad.const(sample.left_feat.data.array)
        rf = ad.const(sample.right_feat.data.array)
        full_h, full_w = 4 * lf.value.shape[1], 4 * lf.value.shape[2]
    else:
        lf = ad.const(sample.left.array)
        rf = ad.const(sample.right.array)
        full_h, full_w = sample.left.shape[1:]

    if cfg.adaptor is not None:
        lf = adaptor_graph(nodes["adaptor"], cfg.adaptor.desc.variant, lf)
        rf = adaptor_graph(nodes["adaptor"], cfg.adaptor.desc.variant, rf)

    quarter = cfg.quarter_res or sample.left_feat is not None
    if quarter and cfg.d_max % 4:
        raise ConfigError(
            f"d_max must be divisible by 4 at quarter resolution, got {cfg.d_max}")
    qd = cfg.d_max // 4 if quarter else cfg.d_max
    if not 0 <= qd < lf.value.shape[2]:
        raise DisparityOutOfRange(
            f"d_max {cfg.d_max} does not fit width {lf.value.shape[2]} "
            f"at matching resolution")
    vol = _cost_node(cfg, lf, rf, qd)

    if cfg.aggregator is not None:
        if vol.value.shape[0] != cfg.aggregator.desc.in_ch:
            raise ChannelMismatch(
                f"cost volume has K={vol.value.shape[0]}, aggregator was "
                f"built for K={cfg.aggregator.desc.in_ch}")
        scores = aggregator_graph(nodes["aggregator"], vol)[0]
    else:
        if vol.value.shape[0] != 1:
            raise ChannelMismatch(
                f"no aggregator: need a scalar cost (K=1), got K={vol.value.shape[0]}")
        scores = ad.reshape(vol, vol.value.shape[1:])

    if quarter:
        scores = ad.lin_resample(scores, 0, 4 * qd + 1, align=True)
        scores = ad.lin_resample(scores, 1, full_h, align=False)
        scores = ad.lin_resample(scores, 2, full_w, align=False)
    p = ad.softmax_disparity(scores, cfg.temperature,
                             hypothesis_mask(cfg.d_max, full_h, full_w))
    return p, ad.regress_disparity(p)


def loss_graph(cfg: PipelineConfig, sample: StereoSample, nodes: dict,
               cached_target=None):
    """(total, ce, sl1) loss nodes for one sample."""
    p, dhat = forward_graph(cfg, sample, nodes)
    if cached_target is None:
        cached_target = training_target(sample.gt, cfg.b, cfg.d_max)
    target, mask = cached_target
    if len(cfg.lambdas) != 1:
        raise ConfigError(
            f"aggregator has 1 output head, got {len(cfg.lambdas)} lambdas")
    ce = ad.cross_entropy(p, target, mask)
    sl1 = ad.smooth_l1(dhat, sample.gt.data.array, mask)
    total = ad.scale(ad.add(ce, ad.scale(sl1, cfg.mu)), cfg.lambdas[0])
    return total, ce, sl1


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params: np.ndarray, grads: np.ndarray, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8):
    """One bias-corrected Adam update, in place on params and state."""
    if not state:
        state["m"] = np.zeros_like(params)
        state["v"] = np.zeros_like(params)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    g = grads.astype(params.dtype, copy=False)
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * (g * g)
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    params -= (lr * mhat / (np.sqrt(vhat) + eps_adam)).astype(params.dtype)
    return params, state


# ---------------------------------------------------------------------------
# stages


def _stage_nets(cfg: PipelineConfig):
    """Deep-copied nets with stage-appropriate frozen flags; trainable names."""
    nets = {}
    for name in ("feature", "adaptor", "aggregator"):
        p = getattr(cfg, name)
        if p is not None:
            nets[name] = p.copy()
    if cfg.stage == "base":
        if "feature" not in nets or "aggregator" not in nets:
            raise ConfigError("base stage trains a feature net and an aggregator")
        trainable = {"feature", "aggregator"} & set(nets)
        if "adaptor" in nets:
            trainable.add("adaptor")
    elif cfg.stage == "adapt":
        if "adaptor" not in nets:
            raise ConfigError("adapt stage needs an adaptor to train")
        if "aggregator" not in nets:
            raise ConfigError("adapt stage needs the (frozen) aggregator")
        trainable = {"adaptor"}
        if cfg.joint:
            trainable.add("aggregator")
    elif cfg.stage == "retrain":
        if "aggregator" not in nets:
            raise ConfigError("retrain stage needs an aggregator")
        if not cfg.resume:
            nets["aggregator"] = init_params(nets["aggregator"].desc, cfg.seed)
        trainable = {"aggregator"}
    else:
        raise ConfigError("graft stage does not train; use graft()")
    for name, p in nets.items():
        p.set_frozen(name not in trainable)
    return nets, trainable


def train_stage(cfg: PipelineConfig, dataset):
    """Run one stage over the dataset; returns (nets, trace).

    nets maps net name to updated NetParams (frozen ones are bitwise copies
    of the input). trace is a list of (step, total, ce, sl1) floats, one row
    per optimizer step, deterministic for a fixed config and seed.
    """
    if not dataset:
        raise EmptyDataset("training requires at least one sample")
    nets, trainable = _stage_nets(cfg)
    run_cfg = replace(cfg, **{n: p for n, p in nets.items()})
    states = {n: {} for n in trainable}
    rng = np.random.default_rng(cfg.seed)
    epochs = cfg.stage_epochs()
    targets = [training_target(s.gt, cfg.b, cfg.d_max) for s in dataset]

    trace = []
    step = 0
    for epoch in range(epochs):
        lr = cfg.lr
        if cfg.stage == "retrain" and epoch >= epochs // 2:
            lr = cfg.lr / 10.0
        for idx in rng.permutation(len(dataset)):
            sample = dataset[idx]
            nodes = _net_nodes(run_cfg)
            total, ce, sl1 = loss_graph(run_cfg, sample, nodes, targets[idx])
            if not np.isfinite(total.value):
                raise DivergenceDetected(
                    f"step {step} (epoch {epoch}, sample "
                    f"{sample.sample_id!r}): loss {float(total.value)}")
            ad.backward(total)
            for name in trainable:
                g = collect_grad(nets[name], nodes[name])
                adam_step(nets[name].flat, g, states[name], lr,
                          cfg.beta1, cfg.beta2, cfg.eps_adam)
            trace.append((step, float(total.value), float(ce.value),
                          float(sl1.value)))
            step += 1
    return nets, trace


def run_inference(cfg: PipelineConfig, sample: StereoSample) -> DisparityMap:
    """Full forward pass to a full-resolution disparity map."""
    p, dhat = forward_graph(cfg, sample, _net_nodes(cfg))
    return DisparityMap(Tensor(dhat.value))


def _peek_channels(feature_dir: str) -> int:
    names = sorted(n for n in os.listdir(feature_dir) if n.endswith(".tns"))
    if not names:
        raise ConfigError(f"{feature_dir}: no .tns feature files")
    return read_tensor(os.path.join(feature_dir, names[0])).shape[0]


def graft(aggregator_params: NetParams, feature_source,
          adaptor_params: NetParams = None, method: str = "cosine",
          d_max: int = 12, temperature: float = 1.0, b: float = 1.0,
          mu: float = 0.1) -> PipelineConfig:
    """Combine trained parts into a runnable config without touching weights.

    feature_source is either feature NetParams or a directory of exported
    feature files. Raises ChannelMismatch when a concat-built aggregator
    meets a feature width it was not trained for; the scalar costs accept
    any width, which is the point of the exercise.
    """
    if isinstance(feature_source, NetParams):
        feature, feature_dir = feature_source, None
        channels = feature.desc.out_ch
    else:
        feature, feature_dir = None, str(feature_source)
        channels = _peek_channels(feature_dir)
    if adaptor_params is not None:
        if adaptor_params.desc.in_ch != channels:
            raise ChannelMismatch(
                f"feature source has C={channels}, adaptor expects "
                f"C={adaptor_params.desc.in_ch}")
        channels = adaptor_params.desc.out_ch
    expected_k = 1 if method in ("cosine", "l2") else 2 * channels
    if aggregator_params.desc.in_ch != expected_k:
        raise ChannelMismatch(
            f"{method} cost of a C={channels} feature gives K={expected_k}, "
            f"aggregator was built for K={aggregator_params.desc.in_ch}")
    return PipelineConfig(
        method=method, d_max=d_max, temperature=temperature, b=b, mu=mu,
        stage="graft",
        feature=feature.copy().set_frozen(True) if feature else None,
        feature_dir=feature_dir,
        adaptor=adaptor_params.copy().set_frozen(True) if adaptor_params else None,
        aggregator=aggregator_params.copy().set_frozen(True))


# ---------------------------------------------------------------------------
# external features and checkpoints


def attach_features(dataset, feature_dir: str):
    """Load {id}_left.tns / {id}_right.tns onto each sample, in place."""
    for s in dataset:
        for side in ("left", "right"):
            path = os.path.join(feature_dir, f"{s.sample_id}_{side}.tns")
            setattr(s, f"{side}_feat", FeatureMap(read_tensor(path)))
    return dataset


def save_checkpoint(nets: dict, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, p in nets.items():
        save_params(p, os.path.join(directory, name))


def load_checkpoint(directory: str) -> dict:
    nets = {}
    for fn in sorted(os.listdir(directory)):
        if fn.endswith(".desc"):
            name = fn[:-5]
            nets[name] = load_params(os.path.join(directory, name))
    if not nets:
        raise ConfigError(f"{directory}: no checkpoints found")
    return nets


def write_trace(trace, path) -> None:
    """Loss trace as CSV with full-precision floats (bitwise reproducible)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,total,ce,sl1\n")
        for step, total, ce, sl1 in trace:
            f.write(f"{step},{total!r},{ce!r},{sl1!r}\n")


# ---------------------------------------------------------------------------
# gradient-check plumbing


def make_loss_builder(cfg: PipelineConfig, sample: StereoSample):
    """(builder, params) for the finite-difference checker.

    builder(flats) rebuilds the whole loss graph from {net name: flat
    vector}, so perturbing an entry of any flat vector is observed by the
    next call.
    """
    params = {n: getattr(cfg, n) for n in ("feature", "adaptor", "aggregator")
              if getattr(cfg, n) is not None}
    cached = training_target(sample.gt, cfg.b, cfg.d_max)

    def builder(flats):
        nodes = _net_nodes(cfg, flats)
        total, _, _ = loss_graph(cfg, sample, nodes, cached)
        return total, nodes

    return builder, params
