import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from tychekit.model import ModelConfig, TycheNet  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def tiny_model():
    cfg = ModelConfig(depth=2, features=4, input_size=(8, 8), init_seed=1)
    return TycheNet(cfg)


def random_inputs(rng, b=1, s=3, k=4, h=8, w=8, dtype=torch.float64):
    target = torch.as_tensor(rng.random((b, h, w)), dtype=dtype)
    ci = torch.as_tensor(rng.random((b, s, h, w)), dtype=dtype)
    cm = torch.as_tensor((rng.random((b, s, h, w)) > 0.5).astype(float), dtype=dtype)
    z = torch.as_tensor(rng.standard_normal((b, k, 1, h, w)), dtype=dtype)
    return target, ci, cm, z


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
