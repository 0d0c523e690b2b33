import re
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gaitssc.ingest import preprocess
from gaitssc.synth import SynthSpec, generate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(n_case=4, n_control=4, cycles_per_subject=(5, 7), seed=3)


@pytest.fixture(scope="session")
def small_data(small_spec):
    raw, truth = generate(small_spec)
    return raw, preprocess(raw), truth


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one status line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE


def _criterion_key(label):
    number, suffix = re.match(r"(\d+)(\w*)", label).groups()
    return int(number), suffix


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: _criterion_key(l.split()[1])):
            terminalreporter.write_line(line)
