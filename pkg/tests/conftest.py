import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion."""
    results = request.config.stash[_RESULTS]

    def report(n: int, ok: bool, detail: str) -> bool:
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        results.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
