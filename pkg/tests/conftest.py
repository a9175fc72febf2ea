import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _quiet_scale_warnings():
    from scanfill.metrics import MsSsimScaleWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MsSsimScaleWarning)
        yield


@pytest.fixture(scope="session")
def smoke():
    from smoke import run_smoke
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_smoke()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


_VERDICTS: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    # the call phase decides the verdict; a failing fixture setup counts as a failure
    if marker is None or not (report.when == "call" or (report.when == "setup" and report.failed)):
        return
    n, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _VERDICTS[n] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[n]
        terminalreporter.write_line(f"{verdict} criterion {n:2d}: {title}" + (f" [{detail}]" if detail else ""))
