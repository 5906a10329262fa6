"""D-dimensional hypergrid DAG.

Actions are indexed ``0..D-1`` (increment dimension ``d``) and ``D``
(terminate).  Terminating at ``x`` moves to the flagged copy ``x^T``, whose
only child is the sink ``FINAL``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MAX_ENUMERABLE = 10**7


class State(NamedTuple):
    coords: tuple
    terminal: bool = False

    def __repr__(self):
        return f"{self.coords}{'^T' if self.terminal else ''}"


# the sink s_f; coords () keeps it distinct from every grid state
FINAL = State((), True)


@dataclass(frozen=True)
class EnvSpec:
    dims: int = 2
    side: int = 8
    r0: float = 1e-3

    # unit-vector actions: no action is a sum of two others, and sums of
    # increments factor uniquely up to order
    closed_form_eligible = True

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if self.side < 2:
            raise ValueError(f"side must be >= 2, got {self.side}")
        if not self.r0 > 0:
            raise ValueError(f"r0 must be positive, got {self.r0}")

    @property
    def n_actions(self):
        return self.dims + 1

    @property
    def terminate_action(self):
        return self.dims

    @property
    def n_states(self):
        return self.side**self.dims

    @property
    def max_trajectory_length(self):
        """Transitions from s_0 to s_f, counting x -> x^T and x^T -> s_f."""
        return self.dims * (self.side - 1) + 2


def initial_state(spec):
    return State((0,) * spec.dims)


def _require_grid_state(spec, state, what):
    if state == FINAL:
        raise ValueError(f"{what}: the final state has no outgoing edges")
    if len(state.coords) != spec.dims:
        raise ValueError(f"{what}: state {state!r} does not belong to a {spec.dims}-D grid")


def valid_actions(spec, state):
    """Boolean mask over the D+1 actions of a non-terminal state."""
    _require_grid_state(spec, state, "valid_actions")
    if state.terminal:
        raise ValueError(f"valid_actions: {state!r} is terminal")
    mask = np.ones(spec.n_actions, dtype=bool)
    mask[: spec.dims] = np.asarray(state.coords) <= spec.side - 2
    return mask


def step(spec, state, action):
    if state.terminal:
        if state == FINAL:
            raise ValueError("step: no transition out of the final state")
        return FINAL
    if not 0 <= action < spec.n_actions or not valid_actions(spec, state)[action]:
        raise ValueError(f"step: action {action} is invalid at {state!r}")
    if action == spec.terminate_action:
        return State(state.coords, True)
    coords = list(state.coords)
    coords[action] += 1
    return State(tuple(coords))


def children(spec, state):
    """List of ``(child, action)`` in action order; ``x^T`` has the single child FINAL."""
    if state == FINAL:
        return []
    if state.terminal:
        return [(FINAL, spec.terminate_action)]
    mask = valid_actions(spec, state)
    return [(step(spec, state, a), a) for a in range(spec.n_actions) if mask[a]]


def parents(spec, state):
    """List of ``(parent, action)`` such that ``step(parent, action) == state``."""
    if state == FINAL:
        raise ValueError("parents: FINAL has one parent per terminal state; not enumerated")
    _require_grid_state(spec, state, "parents")
    if state.terminal:
        return [(State(state.coords), spec.terminate_action)]
    out = []
    for d, c in enumerate(state.coords):
        if c > 0:
            coords = list(state.coords)
            coords[d] -= 1
            out.append((State(tuple(coords)), d))
    if not out:
        raise ValueError("parents: the initial state has no parents")
    return out


def is_edge(spec, u, v):
    """True when ``v`` is a child of ``u``."""
    if u == FINAL:
        return False
    if u.terminal:
        return v == FINAL
    if v == FINAL or v.terminal:
        return v.terminal and v.coords == u.coords
    diff = np.subtract(v.coords, u.coords)
    return bool(diff.sum() == 1 and (diff >= 0).all())


def reward_coords(spec, coords):
    """Vectorized reward over an integer array of shape (..., D)."""
    x = np.abs(np.asarray(coords, dtype=np.float64) / (spec.side - 1) - 0.5)
    ring = ((x > 0.25) & (x <= 0.5)).all(axis=-1)
    peak = ((x > 0.3) & (x < 0.4)).all(axis=-1)
    return spec.r0 + 0.5 * ring + 2.0 * peak


def reward(spec, state):
    if not state.terminal or state == FINAL:
        raise ValueError(f"reward: {state!r} is not a terminal state x^T")
    return float(reward_coords(spec, state.coords))


def all_coords(spec, limit=MAX_ENUMERABLE):
    """Every grid cell as an (H^D, D) int array in row-major order."""
    if spec.n_states > limit:
        raise ValueError(f"grid has {spec.n_states} states, above the enumeration guard {limit}")
    axes = [np.arange(spec.side)] * spec.dims
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dims)


def coords_to_index(spec, coords):
    """Row-major flat index of integer coords, shape (..., D) -> (...)."""
    coords = np.asarray(coords)
    weights = spec.side ** np.arange(spec.dims - 1, -1, -1)
    return coords @ weights


def true_distribution(spec):
    """Target P(x) = R(x)/Z as a flat array over all cells, plus Z."""
    rewards = reward_coords(spec, all_coords(spec))
    z = rewards.sum()
    return rewards / z, z


def modes(spec):
    """Terminal states where the high-reward indicator product is 1 (2^D of them on the standard grid)."""
    x = np.abs(np.arange(spec.side) / (spec.side - 1) - 0.5)
    good = [c for c in range(spec.side) if 0.3 < x[c] < 0.4]
    return {State(c, True) for c in itertools.product(good, repeat=spec.dims)}


def mode_mask(spec):
    """Flat boolean array over cells marking the modes."""
    cells = all_coords(spec)
    x = np.abs(cells / (spec.side - 1) - 0.5)
    return ((x > 0.3) & (x < 0.4)).all(axis=-1)
