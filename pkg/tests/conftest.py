import numpy as np
import pytest

from spillnet import PanelData


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)


def random_panel(rng, n=3, t=12):
    return PanelData(rng.normal(size=(n, t)), rng.normal(size=(n, t)),
                     rng.normal(size=(n, t)))


def noiseless_panel(rng, n=4, t=24, b0=8, delta=(1.5, 1.5), density=0.4):
    """Exact-model panel: y = gamma(t) x + delta(t) z, no error term."""
    x = rng.normal(size=(n, t))
    z = x.mean(axis=1, keepdims=True) + rng.normal(size=(n, t))
    gamma_pre = np.where(rng.random((n, n)) < density, 1.0, 0.0)
    gamma_post = np.where(rng.random((n, n)) < density, 1.0, 0.0)
    y = np.empty((n, t))
    for k in range(t):
        g = gamma_pre if k < b0 else gamma_post
        d = delta[0] if k < b0 else delta[1]
        y[:, k] = g @ x[:, k] + d * z[:, k]
    panel = PanelData(y, x, z)
    return panel, gamma_pre, gamma_post, b0
