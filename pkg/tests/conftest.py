import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")
_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.failed:
        _outcomes[n] = "FAIL"
    elif report.skipped:
        _outcomes.setdefault(n, "SKIP")
    elif report.when == "call":
        _outcomes.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    module = sys.modules.get("test_acceptance")
    titles = getattr(module, "TITLES", {})
    notes = getattr(module, "NOTES", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(set(titles) | set(_outcomes)):
        line = f"criterion {n}: {_outcomes.get(n, 'NOT RUN')}  {titles.get(n, '')}"
        if n in notes:
            line += f"  [{notes[n]}]"
        terminalreporter.write_line(line)
