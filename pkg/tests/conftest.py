import pytest

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request, capsys):
    """Record one PASS/FAIL (or SKIP for ``ok=None``) line; returns ``ok``."""
    lines = request.config.stash[_CRITERIA]

    def report(label: str, ok: bool | None, detail: str = "") -> bool:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"{status} criterion {label}: {detail}".rstrip(": ")
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
