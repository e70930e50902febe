import numpy as np
import pytest

from picolab.envsim import Normalizer, generate_blockworld, split_dataset
from picolab.models import PicoNetwork
from picolab.training import TrainConfig, pretrain_library, train_pico


@pytest.fixture(scope="session")
def blockworld_small():
    return generate_blockworld(12, seed=3)


@pytest.fixture(scope="session")
def blockworld_split():
    """(train_z, test_z, normalizer) for a 40-trajectory pool."""
    ds = generate_blockworld(40, seed=0)
    train, test = split_dataset(ds, 0.8, seed=0)
    norm = Normalizer.fit(train)
    return norm.apply(train), norm.apply(test), norm


@pytest.fixture(scope="session")
def blockworld_library(blockworld_split):
    train_z, _, _ = blockworld_split
    return pretrain_library(train_z, [0, 1, 2], TrainConfig(epochs=60, learning_rate=3e-3, seed=0),
                            names=("reach", "grasp", "lift"))


@pytest.fixture(scope="session")
def blockworld_gated(blockworld_split, blockworld_library):
    """(network, history): gate trained 50 epochs over the frozen fixture library."""
    train_z, test_z, _ = blockworld_split
    net = PicoNetwork.build(blockworld_library, seed=0, hidden_dim=32)
    return train_pico(net, train_z, TrainConfig(epochs=50, learning_rate=3e-3, seed=0),
                      validation=test_z)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Record and immediately show one pass/fail line per acceptance criterion."""
    def emit(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
