import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmevit import tensor as T
from mmevit.synth import GenConfig, generate_samples

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def float64_default():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def small_corpus():
    """One session of the default roster: 108 paired segments."""
    samples, metas = generate_samples(GenConfig(seed=5, sessions=1))
    return samples, metas


@pytest.fixture(scope="session")
def tiny_corpus():
    """Three participants, two sessions: 54 paired segments."""
    samples, metas = generate_samples(GenConfig(seed=2, nd=2, stroke=1, sessions=2))
    return samples, metas


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE]

    def check(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {name}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
