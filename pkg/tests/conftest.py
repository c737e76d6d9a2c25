import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from bsqcodec.weights import ModelConfig, init_weights  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# small enough that a 256x256 image tokenizes in well under a second
SMALL_36 = ModelConfig(patch=8, latent_dim=32, bits=36, depth=1, heads=2, enhance_channels=4)
TINY = ModelConfig(patch=4, latent_dim=16, bits=12, depth=1, heads=2, enhance_channels=4)


@pytest.fixture(scope="session")
def small36_weights():
    return init_weights(SMALL_36, seed=0)


@pytest.fixture(scope="session")
def tiny_weights():
    return init_weights(TINY, seed=3)


@pytest.fixture(scope="session")
def image256():
    rng = np.random.default_rng(11)
    # smooth-ish content: low-res noise upsampled, plus a little grain
    coarse = rng.random((32, 32, 3))
    img = np.kron(coarse, np.ones((8, 8, 1))) + 0.05 * rng.standard_normal((256, 256, 3))
    return np.clip(img - 0.5, -0.5, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fixture_path(name):
    return os.path.join(FIXTURES, name)


ACCEPTANCE_LINES = []


def report_criterion(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
