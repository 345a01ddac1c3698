import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cloudshield import synth
from cloudshield.predictor import TrainConfig, train

settings.register_profile("default", deadline=None, max_examples=50, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def catalog():
    return synth.builtin_scenarios()


@pytest.fixture(scope="session")
def small_model(catalog):
    """A briefly trained predictor; good enough for plumbing tests."""
    traces = [synth.generate(catalog.workloads[w], [], 400, seed=i)
              for i, w in enumerate(("database", "web_server"))]
    cfg = TrainConfig(epochs=2, hidden_dim=8, history_len=6, seed=3)
    return train(traces, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
