"""Shared fixtures: collision models and expansion operators are costly, build once."""

from __future__ import annotations

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def model12():
    from vortex_limit.kinetic_ops import build_L

    return build_L((0.0, 0.0, 0.0), n_v=12)


@pytest.fixture(scope="session")
def model16():
    from vortex_limit.kinetic_ops import build_L

    return build_L((0.0, 0.0, 0.0), n_v=16)


@pytest.fixture(scope="session")
def ops12(model12):
    from vortex_limit.hilbert_expansion import build_expansion_operators

    return build_expansion_operators(model12)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
