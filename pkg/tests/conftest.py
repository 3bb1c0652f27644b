"""Shared fixtures; the acceptance verdicts are collected here and echoed after the run."""

import pytest

_VERDICTS: dict = {}


class Verdicts:
    """Records one PASS/FAIL line per acceptance criterion (a criterion may be fed by several tests)."""

    def record(self, number: int, ok: bool, detail: str) -> bool:
        prev = _VERDICTS.get(number)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        _VERDICTS[number] = (ok, detail)
        return ok


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} — {detail}")
