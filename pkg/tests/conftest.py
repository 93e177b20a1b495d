import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from nvdd import FieldConfig, NvParams  # noqa: E402


@pytest.fixture(scope="session")
def params():
    return NvParams()


@pytest.fixture(scope="session")
def field_280_5():
    return FieldConfig(0.28, 5e-3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
