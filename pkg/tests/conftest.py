import numpy as np
import pytest

from irsrsma.channels import FadingConfig, SystemGeometry, assemble_channels, realization_rng


USERS = ((0.0, 20.0), (50.0, 5.0), (0.0, -20.0), (50.0, -5.0), (55.0, 0.0), (-20.0, 0.0))


def make_channels(seed=0, M=2, K=2, N=4, noise_dbm=-80.0):
    geometry = SystemGeometry(lu_pos=USERS, M=M, N=N).with_users(K)
    return assemble_channels(geometry, FadingConfig(), realization_rng(0, seed), noise_dbm)


@pytest.fixture
def channels():
    return make_channels()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
