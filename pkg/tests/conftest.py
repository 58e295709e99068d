import warnings

import numpy as np
import pytest

import switchlab as sl
from switchlab.design import Environment, ar1_cov

warnings.filterwarnings(
    "ignore", message="neighbor-averaged action is collinear"
)


def linear_environment(m: int = 24, d: int = 2, seed: int = 3) -> Environment:
    """Small linear environment with known nonzero direct and indirect
    effects and modest noise, shared across tests."""
    t = np.arange(m) / m
    theta = np.zeros((m, d + 2))
    theta[:, 0] = 5.0 + 2.0 * np.sin(2 * np.pi * t)
    for j in range(d):
        theta[:, 1 + j] = 0.4 + 0.2 * j
    theta[:, -1] = 1.0 + 0.3 * np.cos(2 * np.pi * t)
    Theta = np.zeros((m - 1, d, d + 2))
    for j in range(d):
        # Distinct dynamics per state dimension keep the regressors
        # well conditioned even on noiseless data.
        Theta[:, j, 0] = 1.0 + 0.5 * j
        Theta[:, j, 1 + j] = 0.4 - 0.15 * j
        Theta[:, j, -1] = 0.6 - 0.2 * j
    rng = np.random.default_rng(seed)
    return Environment(
        theta=theta,
        Theta=Theta,
        eta_cov=ar1_cov(m, 0.5, 1.0),
        eps_sd=np.full(m, 0.5),
        state_noise_sd=np.full((m - 1, d), 0.5),
        init_pool=2.0 + 0.5 * rng.standard_normal((200, d)),
    )


@pytest.fixture(scope="session")
def linear_env():
    return linear_environment()


@pytest.fixture(scope="session")
def small_panel(linear_env):
    return sl.simulate_dataset(
        linear_env, sl.DesignSpec("switchback", ti=1), 30, seed=42
    )


@pytest.fixture(scope="session")
def st_panel():
    env = sl.make_st_truth(m=12, r=4)
    return sl.simulate_st_dataset(
        env, sl.DesignSpec("spatiotemporal_alternation", ti=1, seed=0), 8, seed=7
    )
