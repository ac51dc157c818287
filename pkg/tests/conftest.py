"""Collects acceptance verdicts and prints one PASS/FAIL line per criterion."""

VERDICTS: dict = {}


def record(criterion: int, title: str, passed: bool, detail: str) -> None:
    VERDICTS[criterion] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        title, passed, detail = VERDICTS[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k}: {title} | {detail}")
