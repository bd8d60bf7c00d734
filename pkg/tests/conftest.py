import numpy as np
import pytest

from selective_fd.numcore import RngStream


@pytest.fixture
def rng():
    return RngStream(1234, ("tests",))


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion outcome, then assert it."""
    store = request.config.stash.setdefault(CRITERIA_KEY, [])

    def check(number, title, ok, detail):
        store.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}): {detail}"

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(CRITERIA_KEY, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:>2} "
                                    f"{title}: {detail}")
