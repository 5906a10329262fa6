import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gflownet_ot import hypergrid as hg
from gflownet_ot.hypergrid import FINAL, EnvSpec, State


def brute_reward(c, side, r0):
    x = [abs(v / (side - 1) - 0.5) for v in c]
    ring = all(0.25 < a <= 0.5 for a in x)
    peak = all(0.3 < a < 0.4 for a in x)
    return r0 + 0.5 * ring + 2.0 * peak


@pytest.mark.parametrize("coords,expected", [((6, 6), 2.501), ((7, 7), 0.501), ((3, 3), 0.001),
                                             ((1, 6), 2.501), ((0, 3), 0.001)])
def test_reward_examples(grid2, coords, expected):
    assert hg.reward(grid2, State(coords, True)) == pytest.approx(expected, abs=1e-12)


def test_normalizer_and_mode_probability(grid2):
    z_brute = sum(brute_reward(c, 8, 1e-3) for c in itertools.product(range(8), repeat=2))
    probs, z = hg.true_distribution(grid2)
    assert z == pytest.approx(16.064, abs=1e-12)
    assert z == pytest.approx(z_brute, abs=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    mode_p = probs[hg.coords_to_index(grid2, np.array([6, 6]))]
    assert mode_p == pytest.approx(2.501 / 16.064, abs=1e-15)
    assert round(mode_p, 5) == 0.15569


@pytest.mark.parametrize("dims,count", [(2, 4), (4, 16)])
def test_mode_count(dims, count):
    spec = EnvSpec(dims, 8, 1e-3)
    assert len(hg.modes(spec)) == count
    assert hg.mode_mask(spec).sum() == count
    expected = {State(c, True) for c in itertools.product((1, 6), repeat=dims)}
    assert hg.modes(spec) == expected


def test_reward_is_never_below_r0():
    spec = EnvSpec(3, 6, 0.01)
    r = hg.reward_coords(spec, hg.all_coords(spec))
    assert (r >= 0.01).all()


def test_actions_and_steps(grid2):
    s0 = hg.initial_state(grid2)
    assert s0 == State((0, 0))
    np.testing.assert_array_equal(hg.valid_actions(grid2, State((7, 3))), [False, True, True])
    assert hg.step(grid2, s0, 1) == State((0, 1))
    assert hg.step(grid2, State((2, 2)), 2) == State((2, 2), True)
    assert hg.step(grid2, State((2, 2), True), 2) == FINAL
    with pytest.raises(ValueError):
        hg.step(grid2, State((7, 3)), 0)
    with pytest.raises(ValueError):
        hg.parents(grid2, s0)
    assert hg.children(grid2, State((1, 1), True)) == [(FINAL, 2)]
    assert hg.children(grid2, FINAL) == []


def test_max_trajectory_length(grid2):
    assert grid2.max_trajectory_length == 2 * 7 + 2
    assert grid2.n_states == 64


def test_invalid_specs():
    for args in [(0, 8, 1e-3), (2, 1, 1e-3), (2, 8, 0.0)]:
        with pytest.raises(ValueError):
            EnvSpec(*args)


@settings(max_examples=200, deadline=None)
@given(dims=st.integers(1, 4), side=st.integers(2, 6), data=st.data())
def test_step_and_parents_agree(dims, side, data):
    spec = EnvSpec(dims, side, 1e-3)
    coords = tuple(data.draw(st.lists(st.integers(0, side - 1), min_size=dims, max_size=dims)))
    s = State(coords)
    for child, a in hg.children(spec, s):
        assert hg.step(spec, s, a) == child
        assert hg.is_edge(spec, s, child)
        if child.terminal:
            assert hg.parents(spec, child) == [(s, a)]
        else:
            assert (s, a) in hg.parents(spec, child)
    if sum(coords) > 0:
        for parent, a in hg.parents(spec, s):
            assert hg.step(spec, parent, a) == s
        assert len(hg.parents(spec, s)) == sum(c > 0 for c in coords)


@settings(max_examples=100, deadline=None)
@given(dims=st.integers(1, 4), side=st.integers(2, 9), r0=st.floats(1e-6, 1.0))
def test_vectorized_reward_matches_scalar(dims, side, r0):
    spec = EnvSpec(dims, side, r0)
    cells = hg.all_coords(spec)
    r = hg.reward_coords(spec, cells)
    for k in range(0, len(cells), max(1, len(cells) // 17)):
        assert r[k] == pytest.approx(brute_reward(cells[k], side, r0), abs=1e-15)
    assert (hg.coords_to_index(spec, cells) == np.arange(len(cells))).all()
