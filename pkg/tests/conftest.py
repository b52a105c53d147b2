from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracmono.domain import Box, Geometry, GridSpec, build_partition, make_conductivity

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def partition_1d(cells: int = 64, half_width: float = 1.0, **sets):
    """Domain [-0.5, 0.5] and window [0.6, 0.85] on a 1D grid."""
    geo = Geometry(omega=Box((-0.5,), (0.5,)), window=Box((0.6,), (0.85,)), **sets)
    return build_partition(GridSpec(1, cells, half_width), geo)


def partition_small():
    """Eight cells on [-1, 1]: domain cells 1..3, window cells 5..6."""
    geo = Geometry(omega=Box((-0.7,), (-0.1,)), window=Box((0.3,), (0.7,)))
    return build_partition(GridSpec(1, 8, 1.0), geo)


@pytest.fixture
def p1d():
    return partition_1d()


@pytest.fixture
def p_ref():
    """Reference 1D configuration: h = 1/32, 32 domain cells, 8 window cells, separated B and D."""
    return partition_1d(
        128, 2.0, b_set=Box((0.41,), (0.46,)), d_set=Box((-0.34,), (-0.29,))
    )


@pytest.fixture
def p_small():
    return partition_small()


@pytest.fixture
def unit_sigma():
    def make(p, s=0.5):
        return make_conductivity(p, 1.0, (), 0.4, s)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict, echo it, and fail the test if it did not pass."""

    def record(number: int, passed: bool, measured: str, seconds: float) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {measured} ({seconds:.1f}s)"
        _VERDICTS.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda x: int(x.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
