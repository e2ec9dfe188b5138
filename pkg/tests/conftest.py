import numpy as np
import pytest

from kinefuse import skeleton as sk
from kinefuse.synth import NoiseConfig, generate_sequence


@pytest.fixture(scope="session")
def skel():
    return sk.load_skeleton()


@pytest.fixture(scope="session")
def tree(skel):
    return skel[0]


@pytest.fixture(scope="session")
def rest(skel):
    return skel[1]


@pytest.fixture(scope="session")
def small_ds(tree, rest):
    """Short noisy sequence with the default noise model."""
    return generate_sequence(tree, rest, 120, noise=NoiseConfig(), seed=11)


@pytest.fixture(scope="session")
def clean_ds(tree, rest):
    """Short zero-noise sequence with random calibration."""
    return generate_sequence(tree, rest, 60, noise=NoiseConfig.zero(), seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
