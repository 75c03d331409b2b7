"""Shared fixtures, including the acceptance verdict recorder.

The acceptance tests each emit one PASS/FAIL line; the recorder collects
them so the terminal summary shows the full scorecard even when pytest
captures per-test output.
"""
import pytest

_LINES: list[str] = []


class VerdictRecorder:
    def record(self, name: str, ok: bool, detail: str = "") -> None:
        tag = "PASS" if ok else "FAIL"
        line = f"{tag} {name}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def verdict():
    return VerdictRecorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.write_sep("=", "acceptance scorecard")
    for line in _LINES:
        terminalreporter.write_line(line)
