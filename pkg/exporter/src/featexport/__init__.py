"""Dump pretrained-backbone activations for grafting into the stereo engine."""

from .backbone import TAPS, build_backbone, load_weights, seeded_state_dict
from .container import ExportError, sha256_file, write_manifest, write_tensor
from .export import (IMAGENET_MEAN, IMAGENET_STD, ExportSpec, export_images,
                     load_image, pad_to_multiple)

__all__ = [
    "ExportError", "ExportSpec", "IMAGENET_MEAN", "IMAGENET_STD", "TAPS",
    "build_backbone", "export_images", "load_image", "load_weights",
    "pad_to_multiple", "seeded_state_dict", "sha256_file", "write_manifest",
    "write_tensor",
]

__version__ = "0.1.0"
