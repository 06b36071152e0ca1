import sys

import numpy as np
import pytest

sys.path.insert(0, str(__import__("pathlib").Path(__file__).parent))

from graftstereo import SyntheticSpec, Tensor, gen_pair


def pytest_terminal_summary(terminalreporter):
    """Print the per-criterion verdict lines collected by the gate tests."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = test_acceptance.ACCEPTANCE_LINES
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dot_pair():
    """Constant-disparity random-dot sample, no noise."""
    return gen_pair(SyntheticSpec(16, 32, field=("constant", 3),
                                  density=0.5, seed=7), "fix")


def rand_tensor(rng, *shape):
    return Tensor(rng.standard_normal(shape).astype(np.float32))
