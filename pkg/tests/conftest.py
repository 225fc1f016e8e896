"""Collects one verdict line per acceptance criterion and prints them after the run."""

VERDICTS: list[str] = []


def record(number: int, passed: bool, detail: str) -> None:
    VERDICTS.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
