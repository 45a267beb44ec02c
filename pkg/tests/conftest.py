import numpy as np
import pytest

from rmgd.descriptor import get_geometry


@pytest.fixture(scope="session")
def geom8():
    return get_geometry(32, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """A small synthetic dataset on disk with a training and a test pair file."""
    from rmgd.synthetic import write_synthetic_dataset

    root = tmp_path_factory.mktemp("synthetic")
    return write_synthetic_dataset(
        root, n_points=120, views=3,
        pair_files={"train.txt": (60, 180), "test.txt": (80, 80)},
        seed=7, jitter=1.0,
    )


acceptance_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[acceptance_key] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(acceptance_key, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
