import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from irsde.sde import SdeConfig

settings.register_profile("irsde", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("irsde")


@pytest.fixture
def cfg():
    return SdeConfig.build()


@pytest.fixture
def cfg04():
    # larger stationary variance keeps scalar checks well conditioned
    return SdeConfig.build(lambda_sq=0.04)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one line per acceptance criterion; printed in the terminal summary."""
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].lstrip("C").split(":")[0].rstrip("ab"))):
            terminalreporter.write_line(line)
