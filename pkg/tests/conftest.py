import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=1000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ce4():
    """Certified shell subsolution at d=4, p=2, theta=1/2, alpha=alpha0=24."""
    from degenlab.counterexample import build_counterexample

    return build_counterexample(4, 2.0, 0.5, i_max=40)


@pytest.fixture(scope="session")
def ce4_p3():
    from degenlab.counterexample import build_counterexample

    return build_counterexample(4, 3.0, 0.75, i_max=24, certify=False)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
