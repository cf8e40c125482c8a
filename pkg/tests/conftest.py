import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mcal import Dataset


def make_dataset(rng, n=60, p=3, k=3, beta_scale=0.6, outcome_noise=1.0):
    """Random multi-treatment sample with moderate overlap."""
    x = rng.standard_normal((n, p))
    logits = np.zeros((n, k))
    if p:
        coef = beta_scale * rng.standard_normal((p, k - 1))
        logits[:, 1:] = x @ coef
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    t = (probs.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
    t = np.minimum(t, k - 1)
    # regenerate until every level appears (small n can miss one)
    while np.unique(t).size < k:
        t[rng.integers(0, n)] = rng.integers(0, k)
    y = t + (x[:, 0] if p else 0.0) + outcome_noise * rng.standard_normal(n)
    f = np.column_stack([np.ones(n), x])
    return Dataset(y=y, t=t.astype(np.int64), f=f, k=k, p=p)


def make_binary_outcome_dataset(rng, n=80, p=3, k=2):
    d = make_dataset(rng, n=n, p=p, k=k)
    probs = 1.0 / (1.0 + np.exp(-(0.5 * d.f[:, 1] - 0.2)))
    y = (rng.random(n) < probs).astype(float)
    return Dataset(y=y, t=d.t, f=d.f, k=d.k, p=d.p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240608)
