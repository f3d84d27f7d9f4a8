import re

# --- acceptance summary: one line per criterion -------------------------------

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        status = "PASS" if report.passed else "FAIL"
        if _outcomes.get(n, ("PASS",))[0] == "PASS":
            _outcomes[n] = (status, m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status, title = _outcomes[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
