import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, and fail the test if it did not pass."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = (criterion, bool(ok), detail)
        _ACCEPTANCE.append(line)
        print(f"\n{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")
        assert ok, f"criterion {criterion} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(_ACCEPTANCE, key=lambda r: (len(r[0].split("(")[0]), r[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion:<6} {detail}")
