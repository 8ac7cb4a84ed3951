import numpy as np
import pytest

from chainhydro.chain import ChainParams, GaussianState


def random_params(rng, n_max=10, periodic=None, binding=True):
    n = int(rng.integers(1, n_max + 1))
    return ChainParams(
        n_particles=n,
        mass=float(rng.uniform(0.5, 2.0)),
        coupling=float(rng.uniform(0.0, 1.0)),
        binding=float(rng.uniform(0.2, 2.0)) if binding else 0.0,
        centers=rng.normal(size=n),
        periodic=bool(rng.integers(2)) if periodic is None else periodic,
    )


def random_state(rng, n, correlated=True, scale=1.0):
    """Random valid Gaussian state: mean ~ N(0, scale), covariance A A^T + jitter."""
    mean = rng.normal(scale=scale, size=2 * n)
    if correlated:
        a = rng.normal(scale=0.5, size=(2 * n, 2 * n))
        cov = a @ a.T / (2 * n) + 0.1 * np.eye(2 * n)
    else:
        cov = np.diag(np.concatenate([rng.uniform(0.05, 0.5, n), rng.uniform(0.2, 2.0, n)]))
    return GaussianState(mean, cov)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
