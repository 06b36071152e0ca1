"""Stereo matching around a single-channel similarity volume.

A small feature extractor runs at quarter resolution, a cost volume
scores every disparity hypothesis, a 3d aggregator cleans the scores,
and a softmax head regresses sub-pixel disparity. Because the volume
collapses matching to one channel, trained parts stay interchangeable:
a foreign feature extractor can be grafted onto a trained aggregator
without finetuning, then bridged with a lightweight adaptor.

Everything runs on numpy with an in-package reverse-mode tape; no deep
learning framework is required or used.
"""

from .bench import (SyntheticSpec, box_blur, cost_argmax, epe, error_rate,
                    gen_pair, load_dataset, patch_feature_map, save_dataset,
                    zncc_oracle)
from .cost import COST_METHODS, CostVolume, FeatureMap, build_cost, hypothesis_mask
from .errors import (AxisOutOfRange, ChannelMismatch, ConfigError,
                     DisparityOutOfRange, DivergenceDetected, EmptyDataset,
                     EmptyMask, FormatError, GraftStereoError,
                     GraphNotRecorded, NonPositiveScale,
                     NonPositiveTemperature, ShapeMismatch)
from .estimator import GraftStereoMatcher
from .heads import (DisparityMap, ProbVolume, cross_entropy_loss,
                    laplacian_target, regress_disparity, smooth_l1_loss,
                    softmax_over_disparity, total_loss)
from .io import (read_kv, read_pfm, read_pgm, read_tensor, write_kv,
                 write_pfm, write_pgm, write_tensor)
from .nets import (ADAPTOR_VARIANTS, NET_KINDS, NetDesc, NetParams,
                   adaptor_forward, aggregator_forward, feature_forward,
                   grad_check, init_params, load_params, save_params)
from .pipeline import (PipelineConfig, StereoSample, adam_step, graft,
                       load_checkpoint, run_inference, save_checkpoint,
                       train_stage, training_target)
from .tensor import Tensor, conv2d, conv3d, l2_normalize_channels, softmax_axis

__version__ = "0.1.0"

__all__ = [
    "ADAPTOR_VARIANTS", "AxisOutOfRange", "COST_METHODS", "ChannelMismatch",
    "ConfigError", "CostVolume", "DisparityMap", "DisparityOutOfRange",
    "DivergenceDetected", "EmptyDataset", "EmptyMask", "FeatureMap",
    "FormatError", "GraftStereoError", "GraftStereoMatcher",
    "GraphNotRecorded", "NET_KINDS", "NetDesc", "NetParams",
    "NonPositiveScale", "NonPositiveTemperature", "PipelineConfig",
    "ProbVolume", "ShapeMismatch", "StereoSample", "SyntheticSpec", "Tensor",
    "adam_step", "adaptor_forward", "aggregator_forward", "box_blur",
    "build_cost", "conv2d", "conv3d", "cost_argmax", "cross_entropy_loss",
    "epe", "error_rate", "feature_forward", "gen_pair", "grad_check", "graft",
    "hypothesis_mask", "init_params", "l2_normalize_channels",
    "laplacian_target", "load_checkpoint", "load_dataset", "load_params",
    "patch_feature_map", "read_kv", "read_pfm", "read_pgm", "read_tensor",
    "regress_disparity", "run_inference", "save_checkpoint", "save_dataset",
    "save_params", "smooth_l1_loss", "softmax_axis",
    "softmax_over_disparity", "total_loss", "train_stage", "training_target",
    "write_kv", "write_pfm", "write_pgm", "write_tensor", "zncc_oracle",
]
