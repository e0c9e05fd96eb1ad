import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion gate")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        prev = _results.get(number)
        if prev is None or prev[0] == "PASS" or status == "FAIL":
            _results[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title = _results[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")


@pytest.fixture(scope="session")
def iris():
    from mixcocluster.datasets import load_iris

    return load_iris()


@pytest.fixture(scope="session")
def iris_fit(iris):
    from mixcocluster.optimizer import OptimizerConfig, fit

    return fit(iris, OptimizerConfig(grid=tuple(range(2, 11))))


EXAMPLE_TABLE = """#id,X1,X2,X3,X4,X5
i1,0,-1,.,"{b, a}",A
i2,3,"{0.2, 1, 0}",0,b,B
i3,2,.,5,"{a, c}",A
i4,.,1,22,c,C
"""


@pytest.fixture
def example_table():
    return EXAMPLE_TABLE
