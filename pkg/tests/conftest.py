import numpy as np
import pytest
import torch

from glmc.longtail_data import ImbalanceSpec, build_longtail_subset
from glmc.sources import synthetic_balanced

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line for the terminal summary."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(
            f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_longtail():
    """8x8 RGB synthetic set, 4 classes, IF=10 (120 -> 12 samples)."""
    src = synthetic_balanced(num_classes=4, per_class=120, image_size=8, noise=0.2, seed=3)
    test = synthetic_balanced(num_classes=4, per_class=25, image_size=8, noise=0.2, seed=3,
                              split="test")
    return build_longtail_subset(src, ImbalanceSpec(4, 120, 10.0, seed=0)), test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """Factory for a fast resnet8 config; keyword args are dotted-key overrides."""
    from glmc.config import load_config

    def make(**overrides):
        base = {"model.encoder": "resnet8", "train.epochs": 2, "train.batch_size": 16,
                "train.lr": 0.05, "train.prefetch": 0, "train.augment": False,
                "data.synthetic.num_classes": 4, "data.synthetic.per_class": 120,
                "data.synthetic.test_per_class": 25, "data.synthetic.image_size": 8,
                "data.imbalance_factor": 10}
        base.update({k.replace("__", "."): v for k, v in overrides.items()})
        return load_config(None, [f"{k}={v}" for k, v in base.items()])
    return make
