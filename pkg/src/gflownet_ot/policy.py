"""Forward/backward policies and log Z under the trajectory-balance parameterization.

One MLP trunk (one-hot coordinates -> two leaky-ReLU hidden layers) feeds a
forward head with D+1 logits and a backward head with D logits (parent via
decrementing dimension d).  ``log_z`` is a separate scalar.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .hypergrid import FINAL, coords_to_index, parents, valid_actions

PARAM_NAMES = ("w1", "b1", "w2", "b2", "wf", "bf", "wb", "bb", "log_z")


def encode(spec, coords):
    """Concatenated one-hot per coordinate: (N, D) ints -> (N, D*H) floats."""
    coords = np.asarray(coords, dtype=np.intp).reshape(-1, spec.dims)
    out = np.zeros((len(coords), spec.dims * spec.side))
    cols = coords + spec.side * np.arange(spec.dims)
    np.put_along_axis(out, cols, 1.0, axis=1)
    return out


def forward_mask(spec, coords):
    coords = np.asarray(coords).reshape(-1, spec.dims)
    inc = coords <= spec.side - 2
    return np.concatenate([inc, np.ones((len(coords), 1), dtype=bool)], axis=1)


def backward_mask(spec, coords):
    return np.asarray(coords).reshape(-1, spec.dims) > 0


class PolicyModel:
    def __init__(self, spec, hidden=256, uniform_pb=False, seed=0):
        self.spec = spec
        self.hidden = hidden
        self.uniform_pb = uniform_pb
        rng = np.random.default_rng(seed)
        n_in = spec.dims * spec.side

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        values = {
            "w1": uniform(n_in, (n_in, hidden)),
            "b1": uniform(n_in, (hidden,)),
            "w2": uniform(hidden, (hidden, hidden)),
            "b2": uniform(hidden, (hidden,)),
            # zero heads: the initial policies are uniform over valid actions
            "wf": np.zeros((hidden, spec.dims + 1)),
            "bf": np.zeros(spec.dims + 1),
            "wb": np.zeros((hidden, spec.dims)),
            "bb": np.zeros(spec.dims),
            "log_z": np.zeros(()),
        }
        self.params = {k: ad.Tensor(v, requires_grad=True) for k, v in values.items()}

    # parameter handling ------------------------------------------------------
    def policy_parameters(self):
        names = [n for n in PARAM_NAMES if n != "log_z"]
        if self.uniform_pb:
            names = [n for n in names if n not in ("wb", "bb")]
        return [self.params[n] for n in names]

    @property
    def log_z(self):
        return self.params["log_z"]

    def get_values(self):
        return {k: t.value.copy() for k, t in self.params.items()}

    def set_values(self, values):
        for k in PARAM_NAMES:
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: expected shape {self.params[k].shape}, got {v.shape}")
            self.params[k] = ad.Tensor(v.copy(), requires_grad=True)

    def copy(self):
        other = PolicyModel.__new__(PolicyModel)
        other.spec, other.hidden, other.uniform_pb = self.spec, self.hidden, self.uniform_pb
        other.params = {k: ad.Tensor(t.value.copy(), requires_grad=True) for k, t in self.params.items()}
        return other

    # evaluation ---------------------------------------------------------------
    def _trunk(self, coords):
        p = self.params
        x = ad.Tensor(encode(self.spec, coords))
        h = ad.leaky_relu(x @ p["w1"] + p["b1"])
        return ad.leaky_relu(h @ p["w2"] + p["b2"])

    def log_probs(self, coords):
        """Masked log P_F (N, D+1) and log P_B (N, D) tensors for a batch of grid cells.

        Invalid entries hold -inf.  The backward row of the origin is
        meaningless (it has no parents) and must not be used.
        """
        coords = np.asarray(coords, dtype=np.intp).reshape(-1, self.spec.dims)
        h = self._trunk(coords)
        p = self.params
        log_pf = ad.masked_log_softmax(h @ p["wf"] + p["bf"], forward_mask(self.spec, coords))
        bmask = backward_mask(self.spec, coords)
        origin = ~bmask.any(axis=1)
        bmask[origin, 0] = True
        if self.uniform_pb:
            k = bmask.sum(axis=1, keepdims=True)
            log_pb = ad.Tensor(np.where(bmask, -np.log(k), -np.inf))
        else:
            log_pb = ad.masked_log_softmax(h @ p["wb"] + p["bb"], bmask)
        return log_pf, log_pb

    def log_pf_values(self, coords):
        """No-graph forward log-probs, used while sampling."""
        p = {k: t.value for k, t in self.params.items()}
        x = encode(self.spec, coords)
        h = x @ p["w1"] + p["b1"]
        h = np.where(h > 0, h, 0.01 * h)
        h2 = h @ p["w2"] + p["b2"]
        h2 = np.where(h2 > 0, h2, 0.01 * h2)
        logits = np.where(forward_mask(self.spec, coords), h2 @ p["wf"] + p["bf"], -np.inf)
        logits = logits - logits.max(axis=1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))

    # checkpoints ----------------------------------------------------------------
    def save(self, path):
        """Write a .npz archive of the named tensors plus a JSON header entry."""
        header = {"dims": self.spec.dims, "side": self.spec.side, "r0": self.spec.r0,
                  "hidden": self.hidden, "uniform_pb": self.uniform_pb}
        arrays = {k: t.value for k, t in self.params.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path):
        from .hypergrid import EnvSpec

        with np.load(path) as data:
            header = json.loads(data["__header__"].tobytes().decode())
            values = {k: data[k] for k in PARAM_NAMES}
        spec = EnvSpec(header["dims"], header["side"], header["r0"])
        model = cls(spec, hidden=header["hidden"], uniform_pb=header["uniform_pb"])
        model.set_values(values)
        return model


def forward_policy(model, state):
    """log P_F(. | state) over the D+1 actions as a numpy array (-inf where invalid)."""
    if state == FINAL:
        raise ValueError("forward_policy: the final state has no forward policy")
    spec = model.spec
    if state.terminal:
        out = np.full(spec.n_actions, -np.inf)
        out[spec.terminate_action] = 0.0
        return out
    valid_actions(spec, state)
    return model.log_probs(np.array([state.coords]))[0].value[0]


def backward_policy(model, state):
    """log P_B(parent | state), ordered like ``hypergrid.parents(state)``."""
    plist = parents(model.spec, state)
    if state.terminal:
        return np.zeros(1)
    row = model.log_probs(np.array([state.coords]))[1].value[0]
    return np.array([row[a] for _, a in plist])


def log_total_flow(model):
    return float(model.log_z.value)


class LogProbTable:
    """One batched model evaluation over a set of grid cells, addressable by flat index.

    ``pf(coords, action)`` and ``pb(coords, dim)`` map (arrays of) cells to
    positions in a flat vector holding every log P_F, every log P_B, and a
    trailing exact 0 (``zero``) used for forced transitions such as
    x^T -> x and x^T -> s_f.  ``gather`` returns clamped log-probabilities,
    ``raw`` the unclamped ones (-inf where masked).
    """

    def __init__(self, model, cells):
        spec = model.spec
        cells = np.asarray(cells, dtype=np.intp).reshape(-1, spec.dims)
        self.spec = spec
        self.ids = np.unique(coords_to_index(spec, cells))
        coords = np.stack(np.unravel_index(self.ids, (spec.side,) * spec.dims), axis=-1)
        self.log_pf, self.log_pb = model.log_probs(coords)
        n = len(coords)
        self._pb_offset = n * spec.n_actions
        self.zero = self._pb_offset + n * spec.dims
        self.flat = ad.concat([ad.reshape(self.log_pf, (-1,)), ad.reshape(self.log_pb, (-1,)),
                               ad.Tensor(np.zeros(1))])

    def row(self, coords):
        ids = coords_to_index(self.spec, np.asarray(coords, dtype=np.intp))
        rows = np.searchsorted(self.ids, ids)
        if (rows >= len(self.ids)).any() or (self.ids[np.minimum(rows, len(self.ids) - 1)] != ids).any():
            raise KeyError("cell was not evaluated in this table")
        return rows

    def pf(self, coords, action):
        return self.row(coords) * self.spec.n_actions + np.asarray(action)

    def pb(self, coords, dim):
        return self._pb_offset + self.row(coords) * self.spec.dims + np.asarray(dim)

    def raw(self, index):
        return ad.take(self.flat, index)

    def gather(self, index):
        return ad.floor_clamp(ad.take(self.flat, index))
