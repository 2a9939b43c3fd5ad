from __future__ import annotations


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(report, "when", "call") == "call":
                results[nodeid] = status
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(results):
        name = nodeid.split("::")[-1]
        verdict = "PASS" if results[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
