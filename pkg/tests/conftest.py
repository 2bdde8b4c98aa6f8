import numpy as np
import pytest

from scenario_duality.scenarios import build_complete_binomial, build_lakner_slud, build_no_short_sale
from scenario_duality.utility import Log, Power


@pytest.fixture
def binomial():
    return build_complete_binomial(2.0, 0.5, 0.5, 1)


@pytest.fixture
def binomial2():
    return build_complete_binomial(1.5, 0.8, 0.4, 2, mu=[0.2, 0.3, 0.5], endowment=[0, 0.3, 0.1, 0.5, 0.4, 0.2, 0.1])


@pytest.fixture
def no_short():
    return build_no_short_sale(1.25, 0.9, 0.5, 2)


@pytest.fixture
def lakner():
    return build_lakner_slud([0.0, 2.0, 1.0])


@pytest.fixture
def log_u():
    return Log()


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: s[6:10]):
            terminalreporter.write_line(line)
