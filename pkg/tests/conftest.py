import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evcharge.clock import SimClock
from evcharge.crypto import PrngState
from evcharge.registry import Registry
from evcharge.terminal import Terminal
from evcharge.vehicle import VehicleIdentity, VehicleSession

ID_A = bytes([1]) * 16
K_A = bytes([2]) * 16
K_G = bytes([3]) * 16
T0 = 1_700_000_000_000


@pytest.fixture
def identity():
    return VehicleIdentity(ID_A, K_A, K_G)


@pytest.fixture
def registry():
    reg = Registry()
    reg.register_vehicle(ID_A, K_A, balance=1000, owner_contact="+905550000001")
    return reg


@pytest.fixture
def vehicle(identity):
    return VehicleSession(identity, PrngState(1, 2), SimClock(T0))


@pytest.fixture
def terminal():
    return Terminal(K_G, PrngState(7, 9), SimClock(T0))


# one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
