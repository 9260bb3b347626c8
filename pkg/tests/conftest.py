import warnings

import numpy as np
import pytest
from hypothesis import settings

from irflow.errors import TruncationWarning
from irflow.params import ModelParams

settings.register_profile("irflow", max_examples=25, deadline=None)
settings.load_profile("irflow")


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        yield


def small_params(**kw):
    """Two modes per shell (one direction, two polarizations)."""
    base = dict(J=2, n_radial=1, n_theta=1, n_phi=1, Nmax=2, alpha=0.01, P=(0.2, 0.0, 0.0))
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture
def small():
    return small_params()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
