from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
