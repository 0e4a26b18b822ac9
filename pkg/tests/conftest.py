import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")
    config._acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        item.config._acceptance.append((marker.args[0], marker.args[1], report.outcome, report.duration, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(getattr(config, "_acceptance", []), key=lambda r: str(r[0]))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, duration, detail in rows:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number} {verdict}: {title} ({duration:.1f} s)"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
