import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def record_criterion():
    """Store a one-line PASS/FAIL verdict that is echoed in the terminal summary."""

    def record(key: str, passed: bool, detail: str) -> bool:
        _CRITERIA[key] = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(_CRITERIA[key])
