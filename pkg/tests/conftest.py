import numpy as np
import pytest

from kallele import MutationParams, build_mixture_pool, build_pool


@pytest.fixture(scope="session")
def theta_lyme():
    return MutationParams.symmetric(4.8, 4)


@pytest.fixture(scope="session")
def pool_k4(theta_lyme):
    """Plain pool at a = theta/k: base log-weights exactly zero."""
    return build_pool(theta_lyme, n=100_000, seed=101)


@pytest.fixture(scope="session")
def mixture_pool_k4(theta_lyme):
    """Defensive mixture covering both sign regimes, draws retained."""
    return build_mixture_pool(theta_lyme, (1.2, 0.4, 2.0, 8.0), n=100_000, seed=202)


@pytest.fixture(scope="session")
def pool_k3():
    return build_pool(MutationParams.symmetric(3.0, 3), n=50_000, seed=33)
