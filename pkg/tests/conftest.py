import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_settings():
    from percimdp import aebs
    return aebs.load_settings()


@pytest.fixture(scope="session")
def default_cpl(default_settings):
    from percimdp import aebs
    s = default_settings
    return aebs.build_controller_plant_abstraction(s.grid_spec(), s.aebs)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
