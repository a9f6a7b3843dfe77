import re

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m:
                results[int(m.group(1))] = (m.group(2), status == "passed")
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(results):
        name, ok = results[n]
        terminalreporter.write_line(
            f"criterion {n:2d} ({name}): {'PASS' if ok else 'FAIL'}"
        )
