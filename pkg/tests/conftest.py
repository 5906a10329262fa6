import numpy as np
import pytest

from gflownet_ot.hypergrid import EnvSpec
from gflownet_ot.policy import PolicyModel


def random_model(spec, seed, head_scale=2.0, hidden=32, uniform_pb=False):
    """A model with random heads so the policies are far from uniform."""
    rng = np.random.default_rng(seed)
    model = PolicyModel(spec, hidden=hidden, uniform_pb=uniform_pb, seed=seed)
    values = model.get_values()
    for name in ("wf", "bf", "wb", "bb"):
        values[name] = rng.normal(0.0, head_scale, values[name].shape)
    values["log_z"] = np.array(rng.normal())
    model.set_values(values)
    return model


def random_edges(spec, n, rng):
    """n random (cell, action) edges with the action valid at the cell."""
    cells = rng.integers(0, spec.side, size=(n, spec.dims))
    actions = np.empty(n, dtype=np.intp)
    for k, c in enumerate(cells):
        valid = np.flatnonzero(np.r_[c <= spec.side - 2, True])
        actions[k] = rng.choice(valid)
    return cells, actions


@pytest.fixture
def grid2():
    return EnvSpec(2, 8, 1e-3)


@pytest.fixture
def uniform_model2(grid2):
    return PolicyModel(grid2, hidden=16, seed=0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
