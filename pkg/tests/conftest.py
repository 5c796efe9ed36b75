import os
import sys

import pytest

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)

from qhpc.cli import DATA_DIR  # noqa: E402
from qhpc.fabric import load_fabric  # noqa: E402


@pytest.fixture
def data_path():
    return lambda name: os.path.join(DATA_DIR, name)


@pytest.fixture
def fabric():
    return lambda name: load_fabric(os.path.join(DATA_DIR, name))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
