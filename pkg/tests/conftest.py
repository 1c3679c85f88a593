import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from etpmb.gp_extent import GpHyperParams, MotionParams, SensorPose

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def hp():
    return GpHyperParams.uniform(20, sigma_f2=2.0, sigma_r2=2.0, l2=math.pi / 8)


@pytest.fixture
def motion():
    return MotionParams.constant_velocity(T=0.5, q=(0.01, 0.01, 0.001), beta=0.001, eta=1.11, p_survival=0.999)


@pytest.fixture
def pose():
    return SensorPose(np.array([-105.0, -80.0]), math.radians(45), 0.02 * np.eye(2))


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.5 * np.eye(n))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
