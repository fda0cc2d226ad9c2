import numpy as np
import pytest

from bdswipt.scattering import random_scattering
from bdswipt.system_model import SystemConfig, channel_statistics, make_scenario

# criterion number -> report line, filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def small_cfg():
    return SystemConfig(M=8, L=12, K=3, J=2, N=4, prf_e=1)


@pytest.fixture(scope="session")
def small_setup(small_cfg):
    scen = make_scenario(small_cfg, 3)
    theta = random_scattering(small_cfg.N, 5)
    stats = channel_statistics(scen.ls, scen.geo, theta.theta, scen.plan, small_cfg)
    return small_cfg, scen, theta, stats


@pytest.fixture(scope="session")
def tiny_cfg():
    return SystemConfig(M=4, L=8, K=2, J=2, N=4, prf_e=1)


def rel(a, b):
    return np.abs(np.asarray(a) / np.asarray(b) - 1.0)
