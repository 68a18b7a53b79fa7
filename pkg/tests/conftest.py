import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_image(rng):
    return rng.uniform(0.0, 1.0, size=(16, 24, 3)).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    lines = sorted(
        (value for reports in terminalreporter.stats.values() for r in reports
         if getattr(r, "when", None) == "call"
         for key, value in r.user_properties if key == "acceptance"),
        key=lambda line: int(line.split()[1]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
