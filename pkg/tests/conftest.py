import numpy as np
import pytest
from hypothesis import settings

from anisofem.domains import build_domain

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def prism():
    return build_domain("prism", 0.5)


@pytest.fixture(scope="session")
def fichera():
    return build_domain("fichera", 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
