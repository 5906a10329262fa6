"""Trajectory sampling under the exploration-mixed policy, and the trajectory-balance loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .hypergrid import FINAL, State, reward_coords
from .policy import LogProbTable, forward_mask


@dataclass
class TrajectorySample:
    """One complete trajectory s_0 -> ... -> x -> x^T -> s_f.

    ``coords`` holds the non-terminal states s_0..x (n+1 rows); ``actions``
    the n+1 actions taken from them, the last one being terminate.
    ``log_pf`` are the model's log P_F of those actions at sampling time and
    ``log_pb`` the log P_B of each step's reverse (0 for x^T -> x).
    """

    coords: np.ndarray
    actions: np.ndarray
    log_pf: np.ndarray
    log_pb: np.ndarray
    reward: float

    @property
    def terminal(self):
        return State(tuple(int(c) for c in self.coords[-1]), True)

    @property
    def states(self):
        grid = [State(tuple(int(v) for v in c)) for c in self.coords]
        return grid + [self.terminal, FINAL]

    @property
    def log_p_tau(self):
        return float(self.log_pf.sum())

    def __len__(self):
        return len(self.actions)


def mixture_probs(log_pf, mask, alpha):
    """(1 - alpha) P_F + alpha * Uniform(valid actions), row-wise."""
    uniform = mask / mask.sum(axis=1, keepdims=True)
    return (1.0 - alpha) * np.exp(log_pf) + alpha * uniform


def sample_batch(model, n, explore_alpha, rng):
    """Draw ``n`` trajectories in lockstep; stored log-probs are the model's, not the mixture's."""
    if not 0.0 <= explore_alpha <= 1.0:
        raise ValueError(f"explore_alpha must lie in [0, 1], got {explore_alpha}")
    spec = model.spec
    coords = np.zeros((n, spec.dims), dtype=np.intp)
    paths = [[coords[i].copy()] for i in range(n)]
    acts = [[] for _ in range(n)]
    lpfs = [[] for _ in range(n)]
    active = np.arange(n)
    while len(active):
        cur = coords[active]
        log_pf = model.log_pf_values(cur)
        mask = forward_mask(spec, cur)
        probs = mixture_probs(log_pf, mask, explore_alpha)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(len(active)) * cdf[:, -1]
        # invalid actions carry zero mass, so the cdf never stops on them
        a = np.minimum((u[:, None] >= cdf).sum(axis=1), spec.dims)
        still = []
        for k, i in enumerate(active):
            acts[i].append(int(a[k]))
            lpfs[i].append(float(log_pf[k, a[k]]))
            if a[k] == spec.terminate_action:
                continue
            coords[i, a[k]] += 1
            paths[i].append(coords[i].copy())
            still.append(i)
        active = np.array(still, dtype=np.intp)

    out = []
    for i in range(n):
        path = np.array(paths[i], dtype=np.intp)
        actions = np.array(acts[i], dtype=np.intp)
        out.append(TrajectorySample(path, actions, np.array(lpfs[i]), np.zeros(len(actions)),
                                    float(reward_coords(spec, path[-1]))))
    _fill_log_pb(model, out)
    return out


def _fill_log_pb(model, samples):
    cells = np.concatenate([s.coords for s in samples])
    keys = {tuple(c): None for c in cells.tolist()}
    index = {c: i for i, c in enumerate(keys)}
    _, log_pb = model.log_probs(np.array(list(keys), dtype=np.intp))
    for s in samples:
        rows = [index[tuple(c)] for c in s.coords[1:].tolist()]
        s.log_pb[:-1] = log_pb.value[rows, s.actions[:-1]]


def sample_trajectory(model, explore_alpha, rng):
    return sample_batch(model, 1, explore_alpha, rng)[0]


def needed_cells(samples):
    return np.concatenate([s.coords for s in samples])


def tb_residuals(table, samples, log_z):
    """log Z + sum log P_F - log R - sum log P_B per trajectory, as one tensor node."""
    if not samples:
        raise ValueError("tb_residuals needs at least one trajectory")
    width = max(len(s) for s in samples)
    pf_idx = np.full((len(samples), width), table.zero, dtype=np.intp)
    pb_idx = np.full((len(samples), width), table.zero, dtype=np.intp)
    log_r = np.empty(len(samples))
    for k, s in enumerate(samples):
        if not s.reward > 0:
            raise ValueError(f"trajectory reward must be positive, got {s.reward}")
        n = len(s)
        pf_idx[k, :n] = table.pf(s.coords, s.actions)
        # x^T -> x has P_B = 1, so only the n-1 increments contribute
        pb_idx[k, : n - 1] = table.pb(s.coords[1:], s.actions[:-1])
        log_r[k] = np.log(s.reward)
    sum_pf = ad.tsum(table.gather(pf_idx), axis=1)
    sum_pb = ad.tsum(table.gather(pb_idx), axis=1)
    return sum_pf - sum_pb + log_z - log_r


def tb_losses(model, samples, table=None):
    if table is None:
        table = LogProbTable(model, needed_cells(samples))
    return ad.square(tb_residuals(table, samples, model.log_z))


def tb_loss(model, sample):
    """(log Z + sum log P_F - log R(x) - sum log P_B)^2 for one trajectory."""
    return ad.reshape(tb_losses(model, [sample]), ())
