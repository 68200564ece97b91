import pytest

_LINES: list[str] = []


class AcceptanceLog:
    def record(self, criterion: int, ok: bool, detail: str, blocking: bool = True) -> None:
        status = "PASS" if ok else ("FAIL" if blocking else "FAIL (non-blocking)")
        line = f"criterion {criterion:2d}: {status}  {detail}"
        _LINES.append(line)
        print(line, flush=True)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
