import numpy as np
import pytest

from freqdefense.micronet import MicroNet, desk_net, small_net_spec


@pytest.fixture(scope="session")
def desk_nearest():
    return desk_net(mode="nearest")


@pytest.fixture(scope="session")
def small_net():
    return MicroNet.from_spec(small_net_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
