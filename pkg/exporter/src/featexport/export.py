"""Export quarter-resolution backbone activations to container files.

One input image becomes one {stem}.tns holding the [C, H/4, W/4] float32
activation at the tap, H and W being the replicate-padded dims. The stereo
engine's loader pairs files by the {id}_{left|right} stem convention, so
name the inputs accordingly. A manifest.txt records everything needed to
reproduce the bytes: backbone, tap, normalization, weights digest, padding
and content hashes.
"""

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbone import TAPS, build_backbone, load_weights, weights_digest
from .container import ExportError, sha256_file, write_manifest, write_tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ExportSpec:
    weights: str
    out_dir: str
    backbone: str = "vgg16"
    tap: str = "conv3"
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


def load_image(path) -> np.ndarray:
    """[3,H,W] float32 in [0,1]; non-RGB inputs are converted with a warning."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            warnings.warn(f"{path}: mode {img.mode} converted to RGB")
            img = img.convert("RGB")
        a = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def pad_to_multiple(a: np.ndarray, m: int = 4):
    """Replicate-pad [C,H,W] on bottom/right; returns (padded, (pad_h, pad_w))."""
    h, w = a.shape[1:]
    ph, pw = -h % m, -w % m
    if ph or pw:
        a = np.pad(a, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return a, (ph, pw)


def export_images(image_paths, spec: ExportSpec) -> dict:
    """Run the frozen backbone over each image and write one .tns per input.

    Returns the manifest entries. Single-threaded so repeated runs produce
    bitwise-identical files.
    """
    if not image_paths:
        raise ExportError("no input images")
    if spec.tap not in TAPS:
        raise ExportError(f"unknown tap {spec.tap!r}, have {sorted(TAPS)}")
    stems = [os.path.splitext(os.path.basename(p))[0] for p in image_paths]
    if len(set(stems)) != len(stems):
        raise ExportError(f"duplicate image stems in {stems}")

    torch.set_num_threads(1)
    model = build_backbone(spec.tap)
    load_weights(model, spec.weights)
    channels = TAPS[spec.tap][1]
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(spec.std, dtype=np.float32).reshape(3, 1, 1)

    os.makedirs(spec.out_dir, exist_ok=True)
    entries = {
        "command": "export",
        "backbone": spec.backbone,
        "tap": f"{spec.tap} (post-activation, before third pooling)",
        "normalize.mean": ",".join(f"{v:g}" for v in spec.mean),
        "normalize.std": ",".join(f"{v:g}" for v in spec.std),
        "weights.sha256": weights_digest(model),
        "hash.alg": "sha256",
    }
    with torch.no_grad():
        for path, stem in zip(image_paths, stems):
            img, (ph, pw) = pad_to_multiple(load_image(path))
            x = torch.from_numpy((img - mean) / std).unsqueeze(0)
            feat = model(x)[0].numpy()
            if feat.shape != (channels, img.shape[1] // 4, img.shape[2] // 4):
                raise ExportError(
                    f"{path}: tap produced {feat.shape}, expected "
                    f"({channels}, H/4, W/4)")
            out = os.path.join(spec.out_dir, f"{stem}.tns")
            write_tensor(feat, out)
            entries[f"input.{stem}"] = sha256_file(path)
            entries[f"pad.{stem}"] = f"{ph},{pw}"
            entries[f"output.{stem}"] = sha256_file(out)
    write_manifest(entries, os.path.join(spec.out_dir, "manifest.txt"))
    return entries
