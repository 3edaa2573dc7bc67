"""Shared pytest hooks: one summary line per acceptance criterion."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d{2})_([a-z0-9_]+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, ()):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m is None:
                continue
            num = int(m.group(1))
            name = m.group(2).replace("_", " ")
            if num in rows and rows[num][1] == "FAIL":
                continue
            rows[num] = (name, label)
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(rows):
        name, label = rows[num]
        terminalreporter.write_line(f"criterion {num:02d} ({name}): {label}")
