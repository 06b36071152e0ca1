"""The classification backbone and its tap points.

The default backbone is the 16-layer VGG-style stack; layer indices and
state-dict keys ("features.N.weight") follow the torchvision layout, so a
model-zoo checkpoint drops in unchanged. Only the prefix up to the tap is
built; deeper weights in a full checkpoint are ignored. Weights are never
finetuned here.
"""

import hashlib
import os

import torch
from torch import nn

from .container import ExportError

# tap name -> (index one past the tapped layer, channels at the tap).
# "conv3" is the last activation before the third pooling stage: quarter
# resolution, 256 channels.
TAPS = {"conv3": (16, 256)}

ZOO_HINT = "vgg16-397923af.pth (torchvision model zoo)"

_PREFIX_CFG = [64, 64, "M", 128, 128, "M", 256, 256, 256]


def build_backbone(tap: str = "conv3") -> nn.Module:
    if tap not in TAPS:
        raise ExportError(f"unknown tap {tap!r}, have {sorted(TAPS)}")
    end, _ = TAPS[tap]
    layers = []
    c = 3
    for v in _PREFIX_CFG:
        if v == "M":
            layers.append(nn.MaxPool2d(2, 2))
        else:
            layers.append(nn.Conv2d(c, v, 3, padding=1))
            layers.append(nn.ReLU(inplace=True))
            c = v
    model = nn.Sequential()
    model.add_module("features", nn.Sequential(*layers[:end]))
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def load_weights(model: nn.Module, path) -> None:
    if not os.path.isfile(path):
        raise ExportError(
            f"backbone weights not found at {path}; provide a vgg16 state "
            f"dict such as {ZOO_HINT}, or generate a seeded toy set with "
            f"`featexport init-weights --out {path}`")
    state = torch.load(path, map_location="cpu", weights_only=True)
    wanted = model.state_dict()
    missing = [k for k in wanted if k not in state]
    if missing:
        raise ExportError(
            f"{path} is not a vgg16-style state dict: missing {missing[:3]}"
            f"{'...' if len(missing) > 3 else ''}")
    model.load_state_dict({k: state[k] for k in wanted})


def seeded_state_dict(tap: str = "conv3", seed: int = 0) -> dict:
    """Reproducible stand-in weights for environments without the zoo file."""
    gen = torch.Generator().manual_seed(seed)
    state = {}
    for k, v in build_backbone(tap).state_dict().items():
        fan_in = v[0].numel() if v.ndim > 1 else 1
        state[k] = torch.randn(v.shape, generator=gen) * (2.0 / fan_in) ** 0.5
    return state


def weights_digest(model: nn.Module) -> str:
    """Content hash of the loaded parameters, stable across save formats."""
    h = hashlib.sha256()
    for k, v in sorted(model.state_dict().items()):
        h.update(k.encode())
        h.update(v.numpy().astype("<f4").tobytes())
    return h.hexdigest()
