import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool | None, detail: str) -> str:
    """Store and print one result line; ``passed=None`` records a skip."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"ACCEPTANCE {number}: {status} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
