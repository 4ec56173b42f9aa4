import os
import sys

import numpy as np
import pytest


@pytest.fixture(scope="session")
def gt_cache(tmp_path_factory):
    """Ground-truth render cache shared by the whole session."""
    env = os.environ.get("RADISTILL_CACHE")
    return env if env else str(tmp_path_factory.mktemp("gt_cache"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
