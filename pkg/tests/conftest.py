import numpy as np
import pytest

from spiralarm.arm import ArmGeometry, ArmParameters, build_arm
from spiralarm.dynamics import SimConfig


def pytest_runtest_logreport(report):
    # one visible PASS/FAIL line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {verdict} ({report.duration:.1f}s)",
              flush=True)


@pytest.fixture(scope="session")
def desk_geometry():
    return ArmGeometry(n_segments=8)


@pytest.fixture(scope="session")
def desk_params():
    return ArmParameters(kv=7.80627355304389)


@pytest.fixture(scope="session")
def desk_model(desk_geometry, desk_params):
    return build_arm(desk_geometry, desk_params)


@pytest.fixture(scope="session")
def simcfg():
    return SimConfig(dt=2e-3)
