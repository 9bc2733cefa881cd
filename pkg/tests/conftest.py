import numpy as np
import pytest

from voltreg.grid import Bus, Feeder, Line, PvUnit, SvcUnit, bundled_feeder_path, load_feeder


def series_y(z, phases=("a",)):
    """3x3 per-unit series admittance with impedance z on the given phases
    (diagonal only)."""
    y = np.zeros((3, 3), dtype=complex)
    idx = {"a": 0, "b": 1, "c": 2}
    for p in phases:
        y[idx[p], idx[p]] = 1.0 / z
    return y


def zero3():
    return np.zeros((3, 3), dtype=complex)


def two_bus_feeder(z=0.01 + 0.02j, phase="a"):
    """Slack plus one single-phase bus joined by impedance z (per-unit)."""
    return Feeder(
        buses=[Bus(0, ("a", "b", "c"), is_slack=True), Bus(1, (phase,))],
        lines=[Line(0, 1, series_y(z, (phase,)), zero3())],
        pvs=[], svcs=[],
    )


@pytest.fixture(scope="session")
def feeder10():
    return load_feeder(bundled_feeder_path())


@pytest.fixture
def two_bus():
    return two_bus_feeder()
