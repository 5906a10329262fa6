"""scikit-learn style front end for training a hypergrid sampler."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .evaluator import exact_terminal_distribution
from .hypergrid import EnvSpec, coords_to_index
from .path_reg import RegularizerConfig
from .train import TrainConfig, train
from .trajectories import sample_batch

REG_CHOICES = {"none": "none", "min-ot": "min", "max-ot": "max", "ub-ot": "ub"}


def check_terminal_coords(X, spec):
    """Validate an (n, D) array of integer grid coordinates."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if X.shape[1] != spec.dims:
        raise ValueError(f"X has {X.shape[1]} columns, expected {spec.dims}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ValueError("X must hold integer grid coordinates")
    X = X.astype(np.intp)
    if (X < 0).any() or (X >= spec.side).any():
        raise ValueError(f"coordinates must lie in [0, {spec.side - 1}]")
    return X


class HypergridGFlowNet(BaseEstimator):
    """GFlowNet sampler for the hypergrid reward, trained with TB and optional OT path regularization.

    ``fit`` ignores ``X``: the target is defined by the reward, not by data.
    ``predict_proba(X)`` returns the model's exact terminal probability of each
    row of grid coordinates, ``sample`` draws terminal states from the
    learned forward policy, and ``score`` is the total log-likelihood of X.
    """

    def __init__(self, dims=4, side=8, r0=1e-3, n_steps=62_500, batch_size=16, lr_policy=1e-3,
                 lr_logz=0.1, explore_alpha=0.01, reg="none", ot_method="closed", reg_lambda=0.02,
                 dropout_p=1.0, hidden=256, uniform_pb=False, log_every=500, random_state=0):
        self.dims = dims
        self.side = side
        self.r0 = r0
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.lr_policy = lr_policy
        self.lr_logz = lr_logz
        self.explore_alpha = explore_alpha
        self.reg = reg
        self.ot_method = ot_method
        self.reg_lambda = reg_lambda
        self.dropout_p = dropout_p
        self.hidden = hidden
        self.uniform_pb = uniform_pb
        self.log_every = log_every
        self.random_state = random_state

    def _config(self, out=None):
        if self.reg not in REG_CHOICES:
            raise ValueError(f"reg must be one of {sorted(REG_CHOICES)}, got {self.reg!r}")
        reg = RegularizerConfig(mode=REG_CHOICES[self.reg], method=self.ot_method, lam=self.reg_lambda,
                                dropout_p=self.dropout_p)
        return TrainConfig(env=EnvSpec(self.dims, self.side, self.r0), steps=self.n_steps,
                           batch=self.batch_size, lr_policy=self.lr_policy, lr_logz=self.lr_logz,
                           explore_alpha=self.explore_alpha, reg=reg, seed=self.random_state,
                           hidden=self.hidden, uniform_pb=self.uniform_pb, log_every=self.log_every, out=out)

    def fit(self, X=None, y=None, out=None):
        config = self._config(out)
        result = train(config)
        self.config_ = config
        self.env_ = config.env
        self.model_ = result.model
        self.metrics_ = result.metrics
        self.n_modes_found_ = result.metrics.modes_found
        self.all_modes_at_ = result.all_modes_at
        self.log_z_ = float(result.model.log_z.value)
        return self

    def terminal_distribution(self):
        check_is_fitted(self, "model_")
        return exact_terminal_distribution(self.model_)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_terminal_coords(X, self.env_)
        return self.terminal_distribution()[coords_to_index(self.env_, X)]

    def score(self, X, y=None):
        p = self.predict_proba(X)
        return float(np.log(p).sum())

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        rng = np.random.default_rng(random_state)
        return np.array([s.coords[-1] for s in sample_batch(self.model_, n_samples, 0.0, rng)])
