import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gflownet_ot import autodiff as ad
from gflownet_ot.hypergrid import FINAL, EnvSpec, State, all_coords, parents
from gflownet_ot.policy import (LogProbTable, PolicyModel, backward_policy, encode, forward_policy,
                                log_total_flow)

from conftest import random_model


def test_encoding_is_one_hot(grid2):
    x = encode(grid2, np.array([[0, 7], [3, 2]]))
    assert x.shape == (2, 16)
    np.testing.assert_array_equal(x.sum(axis=1), [2, 2])
    assert x[0, 0] == 1 and x[0, 8 + 7] == 1


def test_fresh_model_is_uniform_over_valid_actions(grid2, uniform_model2):
    np.testing.assert_allclose(np.exp(forward_policy(uniform_model2, State((0, 0)))), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(np.exp(forward_policy(uniform_model2, State((7, 2)))), [0, 0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(np.exp(backward_policy(uniform_model2, State((2, 3)))), [0.5, 0.5], atol=1e-15)
    assert log_total_flow(uniform_model2) == 0.0


def test_forward_policy_on_terminal_and_final(grid2, uniform_model2):
    np.testing.assert_array_equal(forward_policy(uniform_model2, State((3, 3), True)), [-np.inf, -np.inf, 0.0])
    with pytest.raises(ValueError):
        forward_policy(uniform_model2, FINAL)
    np.testing.assert_array_equal(backward_policy(uniform_model2, State((3, 3), True)), [0.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), dims=st.integers(1, 3), side=st.integers(2, 5))
def test_policies_are_normalized_and_masked(seed, dims, side):
    spec = EnvSpec(dims, side, 1e-3)
    model = random_model(spec, seed, head_scale=5.0, hidden=8)
    cells = all_coords(spec)
    log_pf, log_pb = model.log_probs(cells)
    pf = np.exp(log_pf.value)
    np.testing.assert_allclose(pf.sum(axis=1), 1.0, atol=1e-12)
    assert (pf[:, :dims][cells == side - 1] == 0).all()
    assert (pf[:, dims] > 0).all()
    pb = np.exp(log_pb.value[1:])
    np.testing.assert_allclose(pb.sum(axis=1), 1.0, atol=1e-12)
    assert (pb[cells[1:] == 0] == 0).all()
    np.testing.assert_array_equal(model.log_pf_values(cells), log_pf.value)


def test_backward_order_matches_parents():
    spec = EnvSpec(3, 4, 1e-3)
    model = random_model(spec, 5)
    s = State((2, 0, 1))
    row = model.log_probs(np.array([s.coords]))[1].value[0]
    expected = [row[a] for _, a in parents(spec, s)]
    np.testing.assert_array_equal(backward_policy(model, s), expected)


def test_uniform_backward_option(grid2):
    model = random_model(grid2, 2, uniform_pb=True)
    np.testing.assert_allclose(np.exp(backward_policy(model, State((2, 3)))), [0.5, 0.5], atol=1e-15)
    names = {id(p) for p in model.policy_parameters()}
    assert id(model.params["wb"]) not in names


def test_checkpoint_round_trip_is_bit_exact(tmp_path, grid2):
    model = random_model(grid2, 9)
    model.save(tmp_path / "m.npz")
    back = PolicyModel.load(tmp_path / "m.npz")
    for k, v in model.get_values().items():
        assert back.get_values()[k].tobytes() == v.tobytes()
    cells = all_coords(grid2)
    assert back.log_pf_values(cells).tobytes() == model.log_pf_values(cells).tobytes()
    assert back.spec == grid2 and back.hidden == model.hidden


def test_log_z_gradient_step():
    # d/dlogZ (logZ - c)^2 = 2 (logZ - c); one SGD step with lr 0.25 halves the gap
    model = PolicyModel(EnvSpec(2, 4, 1e-3), hidden=4)
    c = np.log(16.064)
    loss = ad.square(model.log_z + (-c))
    (g,) = ad.grad(loss, [model.log_z])
    assert g == pytest.approx(-2 * c, abs=1e-15)
    model.log_z.value = model.log_z.value - 0.25 * g
    assert float(model.log_z.value) == pytest.approx(c / 2, abs=1e-15)


def test_table_lookup(grid2):
    model = random_model(grid2, 1)
    table = LogProbTable(model, np.array([[1, 2], [0, 0], [1, 2]]))
    log_pf, log_pb = model.log_probs(np.array([[1, 2]]))
    assert table.flat.value[table.pf(np.array([1, 2]), 1)] == pytest.approx(log_pf.value[0, 1], abs=1e-14)
    assert table.flat.value[table.pb(np.array([1, 2]), 0)] == pytest.approx(log_pb.value[0, 0], abs=1e-14)
    assert table.flat.value[table.zero] == 0.0
    with pytest.raises(KeyError):
        table.row(np.array([5, 5]))


def test_policy_gradients_match_extrapolated_differences():
    # Richardson extrapolation at h = 1e-4 keeps roundoff small without stepping across ReLU kinks
    spec = EnvSpec(2, 4, 1e-3)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        model = random_model(spec, seed, head_scale=1.0, hidden=8)
        coords = all_coords(spec)
        weights = rng.normal(size=(len(coords), 3))

        def loss():
            log_pf, log_pb = model.log_probs(coords)
            pf = ad.tsum(ad.floor_clamp(log_pf) * (weights * (log_pf.value > -np.inf)))
            pb = ad.tsum(ad.floor_clamp(log_pb[1:]) * (weights[1:, :2] * (log_pb.value[1:] > -np.inf)))
            return ad.square(pf + pb + model.log_z)

        params = [model.params[k] for k in ("w1", "b1", "w2", "b2", "wf", "bf", "wb", "bb")] + [model.log_z]
        grads = ad.grad(loss(), params)
        for p, g in zip(params, grads):
            for i in np.ndindex(p.value.shape):
                def diff(h):
                    old = p.value.copy()
                    p.value = old.copy()
                    p.value[i] += h
                    up = loss().item()
                    p.value = old.copy()
                    p.value[i] -= h
                    down = loss().item()
                    p.value = old
                    return (up - down) / (2 * h)

                rich = (4 * diff(1e-4) - diff(2e-4)) / 3
                assert abs(g[i] - rich) <= 1e-5 * max(abs(g[i]), 1e-2), (seed, i)
