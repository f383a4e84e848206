import numpy as np
import pytest
import torch

from dfdnet.dictionary import build_dictionary
from dfdnet.features import toy_encoder
from dfdnet.synthetic import synthetic_faces


@pytest.fixture(scope="session")
def faces64():
    return synthetic_faces(12, seed=7, resolution=64)


@pytest.fixture(scope="session")
def encoder64():
    return toy_encoder(0, 64)


@pytest.fixture(scope="session")
def dict64(faces64, encoder64):
    return build_dictionary(faces64, encoder64, k=4, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def faces32():
    return synthetic_faces(8, seed=5, resolution=32)


@pytest.fixture(scope="session")
def encoder32():
    return toy_encoder(0, 32)


@pytest.fixture(scope="session")
def dict32(faces32, encoder32):
    return build_dictionary(faces32, encoder32, k=2, seed=0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
