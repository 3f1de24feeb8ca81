import pytest

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one ``CRITERION n PASS|FAIL detail`` line per acceptance check.

    The lines are printed together in the terminal summary so they survive
    output capturing.
    """
    def record(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        line = f"CRITERION {number:>2} {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(line)
