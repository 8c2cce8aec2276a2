import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from motionguide.kinematics import FEATURE_DIM, REST_POSE, to_global

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
torch.set_num_threads(1)


def random_features(rng, n, yaw=0.05, speed=0.03):
    """Plausible walking-like features around the rest pose."""
    x = np.zeros((n, FEATURE_DIM))
    x[:, 0] = rng.normal(0.0, yaw, n)
    x[:, 1:3] = rng.normal(0.0, speed, (n, 2))
    x[:, 3] = 0.9 + rng.normal(0.0, 0.02, n)
    x[:, 4:] = (REST_POSE[1:] - REST_POSE[0]).reshape(-1) + rng.normal(0.0, 0.05, (n, FEATURE_DIM - 4))
    return x


def random_motion(rng, n):
    return to_global(random_features(rng, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
