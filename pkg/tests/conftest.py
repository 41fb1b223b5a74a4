"""Shared pytest hooks: the acceptance summary block."""

ACCEPTANCE_RESULTS = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE_RESULTS[number] = (title, passed, detail)
    line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number} {title}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip())
