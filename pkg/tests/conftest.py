_acceptance_lines: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    _acceptance_lines.append(f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'} — {detail}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
