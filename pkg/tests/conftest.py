from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist"
MNIST_IMAGES = DATA_DIR / "images-idx3-ubyte.gz"
MNIST_LABELS = DATA_DIR / "labels-idx1-ubyte.gz"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_arrays():
    if not (MNIST_IMAGES.exists() and MNIST_LABELS.exists()):
        pytest.skip("MNIST IDX files not present under data/mnist")
    from tsalab.mnist import load_mnist
    return load_mnist(MNIST_IMAGES, MNIST_LABELS)


@pytest.fixture(scope="session")
def mnist_pipeline(mnist_arrays):
    from tsalab.mnist import prepare
    images, labels = mnist_arrays
    return prepare(images, labels, D=10, seed=0)
