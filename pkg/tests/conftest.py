import numpy as np
import pytest

from softshape.autoencoder import TrainConfig, build_model, train
from softshape.codec import AutoencoderCodec
from softshape.shapes import generate_bar_dataset, normalize


@pytest.fixture(scope="session")
def bar_dataset():
    return generate_bar_dataset(40, seed=11)


@pytest.fixture(scope="session")
def normalized_bars(bar_dataset):
    return normalize(bar_dataset)


def _trained(arch, normalized, epochs=150):
    nds, rec = normalized
    model = build_model(arch, seed=0)
    train(model, nds, TrainConfig(epochs=epochs, seed=0))
    model.normalization = rec
    return model


@pytest.fixture(scope="session")
def trained_marker(normalized_bars):
    return _trained("marker", normalized_bars)


@pytest.fixture(scope="session")
def trained_smooth(normalized_bars):
    return _trained("marker-smooth", normalized_bars)


@pytest.fixture(scope="session")
def marker_codec(trained_marker):
    return AutoencoderCodec(trained_marker)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
