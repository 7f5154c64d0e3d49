from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from npkink.core import Dataset

warnings.filterwarnings("ignore", message="The TBB threading layer")

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def kink_data(n=200, beta_g=1.0, beta_x=2.0, gamma=0.25, noise=0.0, seed=0, extra_cov=True):
    """Kink data with a constant or shifter-dependent (callable) kink."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(n)
    m = rng.standard_normal(n)
    x = rng.standard_normal(n)
    gam = gamma(m) if callable(gamma) else np.full(n, gamma)
    d = g - gam
    X = np.column_stack([np.ones(n), x]) if extra_cov else np.ones((n, 1))
    beta_c = np.array([0.3, -0.7])[: X.shape[1]]
    y = beta_g * np.minimum(d, 0) + beta_x * np.maximum(d, 0) + X @ beta_c + noise * rng.standard_normal(n)
    return Dataset(y, g, m, X), beta_c


@pytest.fixture
def noiseless():
    return kink_data()
