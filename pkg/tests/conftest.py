import contextlib

import pytest

_ACCEPTANCE_LINES = []


class _Report:
    def __init__(self):
        self.detail = ""

    def __call__(self, detail):
        self.detail = detail


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title):
        rep = _Report()
        ok = False
        try:
            yield rep
            ok = True
        finally:
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
            if rep.detail:
                line += f" ({rep.detail})"
            _ACCEPTANCE_LINES.append((number, line))
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
