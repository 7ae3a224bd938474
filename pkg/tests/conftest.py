"""Shared pytest wiring.

After a run that touched the acceptance suite, print one verdict line per
criterion so the whole contract is readable at a glance.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(RESULTS):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"[criterion {number:02d}] {name}: {verdict} ({detail})"
        )
