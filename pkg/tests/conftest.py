from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion -> (title, [(test name, passed, details)])
_ACCEPTANCE: dict[int, tuple[str, list]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(criterion, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (report.when != "call" and report.passed):
        return
    criterion, title = mark.args
    details = [v for k, v in item.user_properties if k == "detail"]
    _ACCEPTANCE.setdefault(criterion, (title, []))[1].append((item.name, report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        title, results = _ACCEPTANCE[criterion]
        ok = all(passed for _, passed, _ in results)
        failed = [name for name, passed, _ in results if not passed]
        notes = "; ".join(d for _, _, ds in results for d in ds)
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {title}"
        if failed:
            line += f"  [failed: {', '.join(failed)}]"
        if notes:
            line += f"  ({notes})"
        terminalreporter.write_line(line)
