from __future__ import annotations

import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from geowalk.geometry import build_ball, exact_oracle  # noqa: E402
from geowalk.group import cycle_graph, free_group, free_product, gersten_group, racg  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def F2():
    return free_group(2)


@pytest.fixture(scope="session")
def C4():
    return racg(cycle_graph(4))


@pytest.fixture(scope="session")
def C5():
    return racg(cycle_graph(5))


@pytest.fixture(scope="session")
def gersten():
    return gersten_group()


@pytest.fixture(scope="session")
def Z2Z3():
    return free_product([2, 3])


@pytest.fixture(scope="session")
def OF2(F2):
    return exact_oracle(F2)


@pytest.fixture(scope="session")
def ball_F2_8(F2):
    return build_ball(F2, 8)


@pytest.fixture(scope="session")
def ball_C4_10(C4):
    return build_ball(C4, 10)


@pytest.fixture(scope="session")
def ball_gersten_8(gersten):
    return build_ball(gersten, 8)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
