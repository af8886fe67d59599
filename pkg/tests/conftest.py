import os

import pytest

from hypothesis import settings

settings.register_profile("ci", deadline=None, derandomize=True, print_blob=True)
settings.load_profile(os.environ.get("POWSEC_HYPOTHESIS_PROFILE", "ci"))

_LINES: list[str] = []


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def record(self, ac: str, ok: bool, detail: str) -> bool:
        line = f"{ac}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=_ac_key):
        terminalreporter.write_line(line)


def _ac_key(line: str):
    head = line.split(":", 1)[0]  # e.g. "AC2b"
    digits = "".join(c for c in head[2:] if c.isdigit())
    return int(digits or 0), head
