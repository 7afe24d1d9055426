import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion's PASS/FAIL line, then assert it."""
    def record(number: int, ok: bool, detail: str):
        line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.stash[_VERDICTS][number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
