from __future__ import annotations

import pytest

_RESULTS: list[tuple[int, str, bool, str]] = []


class Recorder:
    def __init__(self, number: int, name: str):
        self.number, self.name = number, name

    def report(self, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {self.number:2d} [{'PASS' if passed else 'FAIL'}] {self.name}: {detail}"
        _RESULTS.append((self.number, self.name, bool(passed), detail))
        print(line)
        assert passed, line


@pytest.fixture
def acceptance():
    return Recorder


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
