"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import contextlib

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


class CriterionRecorder:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.detail = ""

    @contextlib.contextmanager
    def check(self):
        status = "FAIL"
        try:
            yield self
            status = "PASS"
        finally:
            _RESULTS[self.number] = (status, self.title, self.detail)


@pytest.fixture
def criterion():
    return CriterionRecorder


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        line = f"{status} criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
