from pathlib import Path

import numpy as np
import pytest

from disac.geometry import BsConfig

ROOT = Path(__file__).resolve().parents[1]
SCENARIO = ROOT / "scenarios" / "two_bs_crossing.json"

C = 299_792_458.0
R_NATIVE = np.diag([(2 * 0.1 / C) ** 2, 0.01**2, 0.01**2])


def make_bs(position=(0.0, 0.0, 0.0), bs_id=1, pd=0.9, clutter=3.0, fov=70.0, R=None):
    return BsConfig(bs_id, np.array(position, dtype=float), fov, pd, clutter, R_NATIVE if R is None else R)


@pytest.fixture
def bs_origin():
    return make_bs()


@pytest.fixture
def bs1():
    return make_bs((-50.0, 0.0, 10.0), 1)


@pytest.fixture
def scenario_path():
    return SCENARIO


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{status:4s}  {name}: {detail}")
