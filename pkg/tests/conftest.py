import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, name, ok, detail)`` records and prints one verdict line."""

    def record(n, name, ok, detail):
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
