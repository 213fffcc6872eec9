import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "fsconv" / "data"
MNIST_DIR = Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))
CIFAR_DIR = Path(os.environ.get("CIFAR10_DIR", "/root/data/cifar10"))


def have_mnist() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() and (MNIST_DIR / "t10k-labels-idx1-ubyte").exists()


needs_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST files not found in {MNIST_DIR}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict = {}


def record(number: int, title: str, ok: bool, detail: str, seconds: float, limit: float) -> None:
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES[number] = f"[{status}] {number}. {title}: {detail} ({seconds:.1f}s, limit {limit:.0f}s)"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
