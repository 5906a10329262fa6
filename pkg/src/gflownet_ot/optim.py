"""Adam with per-group learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Update ``params`` (Tensors, in place on ``.value``) from ``grads``; returns the state."""
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter is required")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Adam over parameter groups, each ``{"params": [...], "lr": float}``."""

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = [dict(g) for g in groups]
        for g in self.groups:
            if not g["lr"] > 0:
                raise ValueError(f"learning rate must be positive, got {g['lr']}")
            g["state"] = AdamState()
        self.betas = betas
        self.eps = eps

    @property
    def params(self):
        return [p for g in self.groups for p in g["params"]]

    def step(self, grads):
        it = iter(grads)
        for g in self.groups:
            adam_step(g["params"], [next(it) for _ in g["params"]], g["state"], g["lr"], self.betas, self.eps)
