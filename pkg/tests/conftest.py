"""Shared fixtures: one session-scoped intersection map plus small helpers
for building reduced-size environments and training configs."""

import numpy as np
import pytest

from cbfmarl.config import default_config
from cbfmarl.env import IntersectionEnv, SimConfig
from cbfmarl.geometry import build_intersection
from cbfmarl.marl import PpoConfig
from cbfmarl.rewards import RewardConfig


@pytest.fixture(scope="session")
def imap():
    return build_intersection()


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture
def make_env(imap, cfg):
    def factory(method="cbf", n_agents=4, **reward_kwargs):
        reward = RewardConfig(method=method, **reward_kwargs)
        sim = SimConfig(n_agents=n_agents)
        return IntersectionEnv(imap, cfg.vehicle, sim, reward)
    return factory


@pytest.fixture
def tiny_ppo():
    """Training config small enough for sub-second smoke runs."""
    return PpoConfig(total_env_steps=256, rollout_steps=256,
                     minibatch_size=64, episode_horizon=40)


def assert_close(a, b, tol, msg=""):
    a, b = np.asarray(a, float), np.asarray(b, float)
    err = float(np.max(np.abs(a - b)))
    assert err <= tol, f"{msg} max err {err:.3e} > {tol:.1e}"
