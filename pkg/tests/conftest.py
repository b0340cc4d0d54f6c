import json
from pathlib import Path

import numpy as np
import pytest

from senscal.core import ObservedData

GOLDEN_DIR = Path(__file__).parent / "golden"
DATA_DIR = Path(__file__).parent / "data"


def load_golden(name):
    with open(GOLDEN_DIR / name, encoding="utf-8") as fh:
        return json.load(fh)


def toy_sample(seed=0, n=120, p=4, treat_frac=0.65):
    """Small synthetic sample with correctly specified linear models."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    design = np.hstack([np.ones((n, 1)), X])
    slopes = np.array([1.0, 0.5, 0.25, 0.125] + [0.0] * (p - 4))[:p]
    lp = 0.5 + X @ slopes
    t = (rng.random(n) < 1.0 / (1.0 + np.exp(-lp))).astype(float)
    if t.sum() < 3:
        t[:3] = 1.0
    if (1 - t).sum() < 3:
        t[-3:] = 0.0
    y = X @ slopes + rng.normal(size=n)
    return ObservedData(y, t, design, design)


@pytest.fixture
def tiny_csv_path():
    return str(DATA_DIR / "tiny.csv")
