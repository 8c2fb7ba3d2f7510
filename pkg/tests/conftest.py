import numpy as np
import pytest

from featurestep.geometry import Polyline


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def horizontal():
    return [Polyline([(-10.0, 0.0), (10.0, 0.0)])]


CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, status, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} [{status}] {title}: {detail}")


@pytest.fixture
def report(request):
    """Attach a one-line measurement summary to the current acceptance test."""
    def record(text: str) -> None:
        request.node.criterion_detail = text
        print(text)
    return record
