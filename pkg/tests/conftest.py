import pytest

_VERDICTS = {}


@pytest.fixture(scope="session")
def verdict():
    """Record ``verdict(n, ok, detail)`` for the acceptance summary."""

    def record(n, ok, detail):
        _VERDICTS[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
