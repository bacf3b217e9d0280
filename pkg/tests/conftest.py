"""Shared test configuration.

The acceptance checks in test_acceptance.py are the release gate, so
their outcomes get a dedicated one-line-per-check summary at the end
of every run, with wall time against each check's budget.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                rows.append((report.nodeid.split("::")[-1], report))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance checks")
    for name, report in sorted(rows):
        status = "PASS" if report.passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({report.duration:.1f}s)")
