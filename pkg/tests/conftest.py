ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"


def record_skip(number: int, title: str, reason: str) -> None:
    ACCEPTANCE_LINES[number] = f"[SKIP] criterion {number:>2}: {title}: {reason}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
