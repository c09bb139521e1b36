import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from statichedge.market import GridAxis, JointDensityGrid, MarginalDensity, MarketModel  # noqa: E402
from statichedge.single import PayoffSurface  # noqa: E402

ACCEPTANCE_LINES = []


def random_model(rng, nx, ny, zero_cells=0, same_measure=False):
    """Random joint law with risk-neutral marginals on the same supports."""
    ax = GridAxis(np.sort(rng.uniform(-2, 2, nx)) + np.arange(nx) * 1e-3)
    ay = GridAxis(np.sort(rng.uniform(-2, 2, ny)) + np.arange(ny) * 1e-3)
    P = rng.uniform(0.05, 1.0, (nx, ny))
    for _ in range(zero_cells):
        i, j = rng.integers(nx), rng.integers(ny)
        trial = P.copy()
        trial[i, j] = 0.0
        if trial.sum(axis=0).min() > 0 and trial.sum(axis=1).min() > 0:
            P = trial
    P /= P.sum()
    joint = JointDensityGrid(ax, ay, P)
    if same_measure:
        return MarketModel.from_joint(joint)
    a = rng.uniform(0.2, 1.0, nx)
    b = rng.uniform(0.2, 1.0, ny)
    return MarketModel(joint, MarginalDensity(ax, a / a.sum()), MarginalDensity(ay, b / b.sum()))


def random_payoff(rng, model, scale=1.0):
    return PayoffSurface(model.axis_x, model.axis_y, scale * rng.normal(size=model.shape))


def three_state():
    ax = GridAxis(np.array([1.0, 2.0]))
    ay = GridAxis(np.array([1.0, 4.0]))
    model = MarketModel.from_joint(JointDensityGrid(ax, ay, np.array([[0.2, 0.5], [0.3, 0.0]])))
    h = PayoffSurface(ax, ay, np.array([[0.0, 3.0], [1.0, 7.0]]))
    return model, h


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def three_state_example():
    return three_state()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
