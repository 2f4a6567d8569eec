import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def rng():
    from logistic_lda.math_kernels import SeededRng

    return SeededRng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training tests")
