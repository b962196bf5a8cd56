import os

import pytest
import torch
from hypothesis import HealthCheck, settings

from dentalmim.dataset import generate_fixture, write_fixture

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """Six 128x96 images written to disk with a COCO document."""
    index = generate_fixture(6, (128, 96), seed=3, min_teeth=4, max_teeth=10)
    out = tmp_path_factory.mktemp("fixture6")
    path = write_fixture(index, out)
    return index, path


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DENTALMIM_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
