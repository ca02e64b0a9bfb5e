"""Shared fixtures and the per-criterion acceptance report."""
import os

import numpy as np
import pytest

from wetbeam.channel import build_channels, RadiationParams
from wetbeam.config import ExperimentConfig
from wetbeam.geometry import build_scenario

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store the outcome of one acceptance criterion for the final report."""
    def record(name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS[name] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0].strip("C"))):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("WETBEAM_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set WETBEAM_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_config():
    return ExperimentConfig(M=16, N=2, K=2)


@pytest.fixture
def small_channels(small_config):
    geom = build_scenario(small_config, seed=3)
    return build_channels(geom, RadiationParams.from_config(small_config))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
