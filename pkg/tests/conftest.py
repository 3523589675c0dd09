import pytest
from hypothesis import settings

from ifs_ergodic import am2, calibrate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def AM2():
    return am2()


@pytest.fixture(scope="session")
def C05(AM2):
    return calibrate(AM2, 0.5)


@pytest.fixture(scope="session")
def C01(AM2):
    return calibrate(AM2, 0.1)


# --- acceptance summary -----------------------------------------------------

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    if rep.passed:
        detail = getattr(item, "detail", "")
    else:
        detail = rep.longrepr.reprcrash.message.splitlines()[0] if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
    ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
