"""Collects acceptance results and prints one line per criterion."""

import pytest

ACCEPTANCE: dict = {}
CRITERIA = range(1, 13)
_used = []


@pytest.fixture(scope="session")
def acceptance():
    _used.append(True)

    def record(criterion: int, part: str, passed, detail: str = ""):
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _used:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in CRITERIA:
        parts = ACCEPTANCE.get(c)
        if not parts:
            tr.write_line(f"criterion {c:2d}: NOT RUN")
            continue
        ok = all(p for _, p, _ in parts)
        body = "; ".join(f"{name}: {'ok' if p else 'FAIL'}" + (f" [{d}]" if d else "")
                         for name, p, d in parts)
        tr.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {body}")
