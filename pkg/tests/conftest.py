import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; fails the test unless ``soft``."""
    def record(number: int, title: str, ok: bool, detail: str, soft: bool = False):
        tag = ("PASS" if ok else "FAIL") + (" (soft)" if soft else "")
        line = f"[{tag}] {number:>2}. {title}: {detail}"
        request.config.stash[_LINES].append((number, line))
        if not soft:
            assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
