import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``record(criterion, checks)`` with checks as ``[(description, ok), ...]``."""

    def record(criterion, checks):
        _ACCEPTANCE[criterion] = list(checks)
        return all(ok for _, ok in checks)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[criterion]
        status = "PASS" if all(ok for _, ok in checks) else "FAIL"
        failed = [d for d, ok in checks if not ok]
        if failed:
            detail = "; ".join(failed)
        elif len(checks) <= 8:
            detail = "; ".join(d for d, _ in checks)
        else:
            detail = f"all {len(checks)} checks"
        terminalreporter.write_line(f"criterion {criterion}: {status} ({detail})")
