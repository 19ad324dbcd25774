import pytest

# criterion number -> (passed, detail, elapsed seconds, limit seconds)
_RESULTS: dict[int, tuple[bool, str, float, float | None]] = {}


def _line(n: int) -> str:
    if n not in _RESULTS:
        return f"ACCEPTANCE {n}: FAIL - no result recorded"
    ok, detail, elapsed, limit = _RESULTS[n]
    budget = f"{elapsed:.1f}s" if limit is None else f"{elapsed:.1f}s / {limit:g}s"
    return f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail} ({budget})"


@pytest.fixture
def acceptance():
    """Returns ``record(n, ok, detail, elapsed, limit)``; it stores the
    outcome for the summary and fails the test when ``ok`` is false or the
    runtime exceeds ``limit``."""

    def record(n: int, ok: bool, detail: str, elapsed: float, limit: float | None = None) -> None:
        in_time = limit is None or elapsed <= limit
        if not in_time:
            detail = f"{detail}; over time budget"
        _RESULTS[n] = (bool(ok) and in_time, detail, elapsed, limit)
        print(_line(n))
        assert ok and in_time, _line(n)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        terminalreporter.write_line(_line(n))
