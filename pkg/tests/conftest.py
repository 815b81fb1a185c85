import pytest

_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record and print a one-line PASS/FAIL verdict, then assert it."""

    def emit(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


@pytest.fixture
def info(capsys):
    def emit(line):
        with capsys.disabled():
            print("\n  " + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
