import pathlib
import sys

import numpy as np
import pytest
import torch
from PIL import Image

sys.path.insert(0, str(pathlib.Path(__file__).parent.parent / "src"))

from featexport import seeded_state_dict


@pytest.fixture(scope="session")
def weights_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("weights") / "toy.pth"
    torch.save(seeded_state_dict(seed=0), p)
    return str(p)


def make_png(path, h, w, seed=99, mode="RGB"):
    rng = np.random.default_rng(seed)
    if mode == "RGB":
        a = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    else:
        a = rng.integers(0, 256, (h, w), dtype=np.uint8)
    Image.fromarray(a, mode).save(path)
    return str(path)
