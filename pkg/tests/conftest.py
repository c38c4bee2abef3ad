import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""
    def record(number: int, ok: bool, detail: str):
        _VERDICTS.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_VERDICTS[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
