import os

import numpy as np
import pytest

from fair_reweigh import data

RAW = data.DATA_DIR


def have_raw(name):
    src = data.BUILTIN[name]["source"]
    srcs = [src] if isinstance(src, str) else src
    return all(os.path.isfile(os.path.join(RAW, s)) for s in srcs)


needs_raw = pytest.mark.skipif(not have_raw("german"), reason="raw benchmark files not fetched")


def make_dataset(n=80, d=4, seed=0, role="train", shift=0.8):
    """Synthetic data where the sensitive group shifts both features and labels."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    x = rng.normal(size=(n, d)) + shift * a[:, None] * np.linspace(1, 0, d)
    logits = x @ np.linspace(1.0, -0.5, d) + 0.7 * a - 0.2
    y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(int)
    # every (a, y) cell nonempty
    y[:4] = [0, 1, 0, 1]
    a[:4] = [0, 0, 1, 1]
    return data.Dataset(x, y, a, role)


@pytest.fixture
def synth():
    return make_dataset(120, 4, 0, "train"), make_dataset(80, 4, 1, "val"), make_dataset(80, 4, 2, "test")


@pytest.fixture(scope="session")
def german():
    if not have_raw("german"):
        pytest.skip("raw benchmark files not fetched")
    return data.load_dataset("german")
