import pytest

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])


@pytest.fixture
def criterion(request):
    """Record the pass/fail line of one acceptance criterion, then return the verdict."""

    def record(number: int, ok: bool, text: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        request.config.stash[CRITERIA][number] = line
        print(line)
        return ok

    return record
