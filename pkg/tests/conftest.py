import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""

    def report(number: int, passed: bool | None, detail: str) -> bool:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"[{status}] criterion {number}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return bool(passed)

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
