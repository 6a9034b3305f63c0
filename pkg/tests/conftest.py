"""Shared test configuration: acceptance-criterion result table.

Criterion tests register their verdict through ``record_criterion`` before
asserting, so the terminal summary always carries one PASS/FAIL line per
criterion with the measured numbers, even when an assertion trips.
"""

_CRITERIA: dict[str, tuple[bool, str]] = {}


def record_criterion(cid: str, passed: bool, detail: str = "") -> bool:
    """Store the verdict for one acceptance criterion; returns ``passed``."""
    _CRITERIA[cid] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        passed, detail = _CRITERIA[cid]
        tag = "PASS" if passed else "FAIL"
        line = f"[{tag}] {cid}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
