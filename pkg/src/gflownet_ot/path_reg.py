"""Path regularization via optimal transport between consecutive forward policies.

An edge is a pair ``(s, a*)``: the grid cell ``s`` and the action taken there,
so ``s' = s + e_{a*}`` for an increment or ``s' = s^T`` for terminate.  The
batched routines take an ``(E, D)`` cell array and an ``(E,)`` action array
and share one ``LogProbTable`` evaluation of the model.

All log-probabilities entering a cost are floored at ``autodiff.LOG_FLOOR``
one factor at a time, so the back-and-forth cost stays additive in its three
factors and the closed form and the cost-matrix route see the same numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .hypergrid import FINAL, State, children, is_edge
from .ot import exact_ot, sinkhorn
from .policy import LogProbTable, forward_mask
from .trajectories import needed_cells, tb_residuals

MODES = ("none", "min", "max", "ub")
METHODS = ("closed", "sinkhorn", "exact")


@dataclass
class RegularizerConfig:
    mode: str = "none"
    method: str = "closed"
    lam: float = 0.02
    dropout_p: float = 1.0
    sinkhorn_epsilon: float = 0.01
    sinkhorn_iters: int = 500
    sinkhorn_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if not 0 < self.dropout_p <= 1:
            raise ValueError(f"dropout_p must lie in (0, 1], got {self.dropout_p}")
        if not self.sinkhorn_epsilon > 0:
            raise ValueError("sinkhorn_epsilon must be positive")


# edge bookkeeping -----------------------------------------------------------

def edge_of(spec, s, s_next):
    """(cells, actions) arrays for the single edge s -> s_next."""
    if s.terminal or s == FINAL:
        raise ValueError(f"{s!r} has no forward policy over grid children")
    for child, a in children(spec, s):
        if child == s_next:
            return np.array([s.coords], dtype=np.intp), np.array([a], dtype=np.intp)
    raise ValueError(f"{s_next!r} is not a child of {s!r}")


def trajectory_edges(sample):
    """All edges s_t -> s_{t+1} up to x -> x^T; x^T -> s_f is left out (no policy at s_f)."""
    return sample.coords, sample.actions


def edge_cells(spec, cells):
    """Cells whose policies an edge needs: s and its increment children."""
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, spec.dims)
    out = [cells]
    for d in range(spec.dims):
        nxt = cells.copy()
        nxt[:, d] += 1
        out.append(nxt[nxt[:, d] <= spec.side - 1])
    return np.concatenate(out)


def _children_layout(spec, cells, actions):
    """Aligned child indices: U[e, i] = s + e_i, SP[e] = s'; validity masks per side."""
    e = len(cells)
    eye = np.eye(spec.dims, dtype=np.intp)
    u = cells[:, None, :] + eye[None, :, :]
    valid_s = forward_mask(spec, cells)
    sp_terminal = actions == spec.terminate_action
    sp = cells.copy()
    inc = ~sp_terminal
    sp[inc, actions[inc]] += 1
    valid_sp = np.zeros((e, spec.n_actions), dtype=bool)
    valid_sp[inc] = forward_mask(spec, sp[inc])
    # placeholders for invalid children point at s itself; they are masked out
    u_safe = np.where(valid_s[:, : spec.dims, None], u, cells[:, None, :])
    return u_safe, valid_s, sp, sp_terminal, valid_sp


def _masked_exp(table, index, mask):
    return ad.where(mask, ad.exp(table.raw(np.where(mask, index, table.zero))), 0.0)


def _edge_terms(table, cells, actions):
    spec = table.spec
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, spec.dims)
    actions = np.asarray(actions, dtype=np.intp).reshape(-1)
    u, valid_s, sp, sp_terminal, valid_sp = _children_layout(spec, cells, actions)
    e, dims, n_act = len(cells), spec.dims, spec.n_actions
    all_actions = np.broadcast_to(np.arange(n_act), (e, n_act))
    inc_actions = np.broadcast_to(np.arange(dims), (e, dims))

    pf_s_idx = table.pf(cells[:, None, :], all_actions)
    p_s = _masked_exp(table, pf_s_idx, valid_s)
    # log P_B(s | u_i): the increment children from the model, s^T has P_B = 1
    pb_u_idx = np.full((e, n_act), table.zero, dtype=np.intp)
    pb_u_idx[:, :dims] = np.where(valid_s[:, :dims], table.pb(u, inc_actions), table.zero)
    log_pb_u = table.gather(pb_u_idx)
    log_pf_star = table.gather(table.pf(cells, actions))
    p_star = ad.exp(table.raw(table.pf(cells, actions)))

    sp_safe = np.where(sp_terminal[:, None], cells, sp)
    pf_sp_idx = np.where(valid_sp, table.pf(sp_safe[:, None, :], all_actions), table.zero)
    p_sp = _masked_exp(table, pf_sp_idx, valid_sp)
    log_pf_sp = table.gather(pf_sp_idx)

    pb_s_sp_idx = np.where(sp_terminal, table.zero, table.pb(sp_safe, np.minimum(actions, dims - 1)))
    log_pb_s_sp = table.gather(pb_s_sp_idx)
    return dict(cells=cells, actions=actions, u=u, valid_s=valid_s, valid_sp=valid_sp, sp=sp_safe,
                sp_terminal=sp_terminal, p_s=p_s, log_pb_u=log_pb_u, log_pf_star=log_pf_star,
                p_star=p_star, p_sp=p_sp, log_pf_sp=log_pf_sp, log_pb_s_sp=log_pb_s_sp)


def _upper_bound(t):
    cross_entropy = -ad.tsum(t["p_s"] * t["log_pb_u"], axis=1)
    entropy_next = -ad.tsum(t["p_sp"] * t["log_pf_sp"], axis=1)
    return cross_entropy - t["log_pf_star"] + entropy_next


def upper_bound_values(table, cells, actions):
    """H(P_F(.|s), P*_B(.|s)) - log P_F(s'|s) + H(P_F(.|s')) per edge."""
    return _upper_bound(_edge_terms(table, cells, actions))


def closed_form_values(table, cells, actions):
    """Exact OT value per edge from the closed form valid on unit-increment action sets."""
    spec = table.spec
    if not spec.closed_form_eligible:
        raise ValueError("closed form OT requires an eligible environment")
    t = _edge_terms(table, cells, actions)
    e, dims = len(t["cells"]), spec.dims
    actions = t["actions"]
    inc_actions = np.broadcast_to(np.arange(dims), (e, dims))
    # diagonal pairs u_i -> v_i = u_i + e_{a*}: shared increment i != a*, valid on both sides
    shared = t["valid_s"][:, :dims] & t["valid_sp"][:, :dims] & (inc_actions != actions[:, None])
    u_star_idx = np.where(shared, table.pf(t["u"], np.where(shared, actions[:, None], 0)), table.zero)
    log_pf_direct = table.gather(u_star_idx)
    log_pb_u = t["log_pb_u"][:, :dims]
    log_pf_sp = t["log_pf_sp"][:, :dims]
    gap = log_pb_u + ad.reshape(t["log_pf_star"], (e, 1)) + log_pf_sp - log_pf_direct
    # min(0, gap); a zero gap keeps the back-and-forth branch
    c_prime = ad.where(shared & (gap.value < 0), gap, 0.0)
    matched = ad.minimum(t["p_s"][:, :dims], t["p_sp"][:, :dims])
    diagonal = ad.tsum(matched * c_prime, axis=1)
    stay = t["p_star"] * (t["log_pb_s_sp"] + t["log_pf_star"])
    return _upper_bound(t) + stay + diagonal


def cost_tensors(table, cells, actions):
    """Generic cost matrices, padded to (E, D+1, D+1), built from graph queries.

    Rows follow the children of s and columns the children of s' in action
    order (s' terminal: a single column for s_f).  Returns the cost tensor
    plus the marginal tensors and support masks.
    """
    spec = table.spec
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, spec.dims)
    actions = np.asarray(actions, dtype=np.intp).reshape(-1)
    e, n = len(cells), spec.n_actions
    back_u = np.full((e, n), table.zero, dtype=np.intp)
    fwd_star = table.pf(cells, actions)
    fwd_v = np.full((e, n), table.zero, dtype=np.intp)
    direct = np.full((e, n, n), table.zero, dtype=np.intp)
    has_edge = np.zeros((e, n, n), dtype=bool)
    same = np.zeros((e, n, n), dtype=bool)
    row_mask = np.zeros((e, n), dtype=bool)
    col_mask = np.zeros((e, n), dtype=bool)
    marg_s = np.full((e, n), table.zero, dtype=np.intp)
    marg_sp = np.full((e, n), table.zero, dtype=np.intp)
    for k in range(e):
        s = State(tuple(int(c) for c in cells[k]))
        kids = children(spec, s)
        s_next = dict((a, c) for c, a in kids)[int(actions[k])]
        grand = children(spec, s_next)
        for i, (u, a) in enumerate(kids):
            row_mask[k, i] = True
            marg_s[k, i] = table.pf(s.coords, a)
            back_u[k, i] = table.zero if u.terminal else table.pb(u.coords, a)
        for j, (v, b) in enumerate(grand):
            col_mask[k, j] = True
            marg_sp[k, j] = table.zero if s_next.terminal else table.pf(s_next.coords, b)
            fwd_v[k, j] = marg_sp[k, j]
        for i, (u, _) in enumerate(kids):
            for j, (v, _) in enumerate(grand):
                if u == v:
                    same[k, i, j] = True
                elif is_edge(spec, u, v):
                    has_edge[k, i, j] = True
                    if not u.terminal:
                        step_action = spec.terminate_action if v.terminal else int(np.argmax(np.subtract(v.coords, u.coords)))
                        direct[k, i, j] = table.pf(u.coords, step_action)
    back_and_forth = -(ad.reshape(table.gather(back_u), (e, n, 1))
                       + ad.reshape(table.gather(fwd_star), (e, 1, 1))
                       + ad.reshape(table.gather(fwd_v), (e, 1, n)))
    with_direct = ad.minimum(back_and_forth, -table.gather(direct))
    cost = ad.where(has_edge, with_direct, back_and_forth)
    cost = ad.where(same | ~(row_mask[:, :, None] & col_mask[:, None, :]), 0.0, cost)
    alpha = ad.where(row_mask, ad.exp(table.raw(marg_s)), 0.0)
    beta = ad.where(col_mask, ad.exp(table.raw(marg_sp)), 0.0)
    return cost, alpha, beta, row_mask, col_mask


def transport_values(table, cells, actions, method="exact", epsilon=0.01, max_iters=500, tol=1e-6):
    """Per-edge <C, pi*> with pi* solved on the current values and held constant."""
    cost, alpha, beta, row_mask, col_mask = cost_tensors(table, cells, actions)
    plans = np.zeros(cost.shape)
    for k in range(cost.shape[0]):
        r, c = row_mask[k], col_mask[k]
        a = alpha.value[k, r]
        b = beta.value[k, c]
        a, b = a / a.sum(), b / b.sum()
        sub = cost.value[k][np.ix_(r, c)]
        if method == "exact":
            _, plan = exact_ot(a, b, sub)
        elif method == "sinkhorn":
            _, plan = sinkhorn(a, b, sub, epsilon, max_iters, tol)
        else:
            raise ValueError(f"unknown transport method {method!r}")
        plans[k][np.ix_(r, c)] = plan.matrix
    return ad.tsum(ad.tsum(cost * plans, axis=2), axis=1)


def edge_values(table, cells, actions, cfg):
    if cfg.mode == "ub":
        return upper_bound_values(table, cells, actions)
    if cfg.method == "closed":
        return closed_form_values(table, cells, actions)
    return transport_values(table, cells, actions, cfg.method, cfg.sinkhorn_epsilon,
                            cfg.sinkhorn_iters, cfg.sinkhorn_tol)


# single-edge API --------------------------------------------------------------

@dataclass
class CostMatrix:
    matrix: np.ndarray
    rows: list
    cols: list


@dataclass
class AlignedNeighborhood:
    """Children of s and s' aligned by action id; ``None`` marks an invalid action."""

    s: State
    s_next: State
    a_star: int
    u: list
    v: list
    valid_s: np.ndarray
    valid_sp: np.ndarray


def aligned_neighborhood(spec, s, s_next):
    cells, actions = edge_of(spec, s, s_next)
    u = [None] * spec.n_actions
    v = [None] * spec.n_actions
    for c, a in children(spec, s):
        u[a] = c
    if s_next.terminal:
        v[spec.terminate_action] = FINAL
    else:
        for c, a in children(spec, s_next):
            v[a] = c
    return AlignedNeighborhood(s, s_next, int(actions[0]), u, v,
                               np.array([x is not None for x in u]), np.array([x is not None for x in v]))


def _table_for(model, cells):
    return LogProbTable(model, edge_cells(model.spec, cells))


def cost_matrix(model, s, s_next):
    cells, actions = edge_of(model.spec, s, s_next)
    cost, _, _, row_mask, col_mask = cost_tensors(_table_for(model, cells), cells, actions)
    rows = [c for c, _ in children(model.spec, s)]
    cols = [c for c, _ in children(model.spec, s_next)]
    return CostMatrix(cost.value[0][np.ix_(row_mask[0], col_mask[0])], rows, cols)


def pseudo_backward(model, s):
    """P*_B(u_i | s) = P_B(s | u_i) for each child u_i of s, in action order (not normalized)."""
    kids = children(model.spec, s)
    table = _table_for(model, np.array([s.coords]))
    out = []
    for u, a in kids:
        out.append(1.0 if u.terminal else float(np.exp(table.flat.value[table.pb(u.coords, a)])))
    return np.array(out)


def closed_form_ot(model, nbhd):
    cells = np.array([nbhd.s.coords], dtype=np.intp)
    actions = np.array([nbhd.a_star], dtype=np.intp)
    return ad.reshape(closed_form_values(_table_for(model, cells), cells, actions), ())


def upper_bound_edge(model, s, s_next):
    cells, actions = edge_of(model.spec, s, s_next)
    return ad.reshape(upper_bound_values(_table_for(model, cells), cells, actions), ())


def edge_ot(model, s, s_next, method="closed", **sinkhorn_kw):
    cells, actions = edge_of(model.spec, s, s_next)
    table = _table_for(model, cells)
    if method == "closed":
        if not model.spec.closed_form_eligible:
            raise ValueError("closed form OT requires an eligible environment")
        values = closed_form_values(table, cells, actions)
    else:
        values = transport_values(table, cells, actions, method, **sinkhorn_kw)
    return ad.reshape(values, ())


# trajectory-level losses --------------------------------------------------------

def _dropout_weights(n_edges, p, rng):
    if p >= 1.0:
        return np.ones(n_edges)
    if rng is None:
        raise ValueError("dropout_p < 1 needs an rng")
    return (rng.random(n_edges) < p) / p


def batch_losses(model, samples, cfg, rng=None):
    """Per-trajectory (combined, tb, reg) tensors for a batch sharing one model evaluation.

    Edges dropped by the Bernoulli(p) mask are never evaluated; the kept ones
    are scaled by 1/p so the regularizer estimate stays unbiased.
    """
    spec = model.spec
    cells = [needed_cells(samples)]
    use_reg = cfg.mode != "none"
    if use_reg:
        owner, edge_c, edge_a, weights = [], [], [], []
        for k, s in enumerate(samples):
            c, a = trajectory_edges(s)
            w = _dropout_weights(len(a), cfg.dropout_p, rng)
            keep = w > 0
            owner.append(np.full(keep.sum(), k))
            edge_c.append(c[keep])
            edge_a.append(a[keep])
            weights.append(w[keep])
        owner = np.concatenate(owner)
        edge_c = np.concatenate(edge_c).reshape(-1, spec.dims)
        edge_a = np.concatenate(edge_a)
        weights = np.concatenate(weights)
        cells.append(edge_cells(spec, edge_c))
    table = LogProbTable(model, np.concatenate(cells))
    tb = ad.square(tb_residuals(table, samples, model.log_z))
    if not use_reg:
        return tb, tb, ad.Tensor(np.zeros(len(samples)))
    if len(edge_a):
        values = edge_values(table, edge_c, edge_a, cfg)
        scatter = np.zeros((len(samples), len(edge_a)))
        scatter[owner, np.arange(len(edge_a))] = weights
        reg = ad.reshape(ad.Tensor(scatter) @ ad.reshape(values, (-1, 1)), (-1,))
    else:
        reg = ad.Tensor(np.zeros(len(samples)))
    sign = -1.0 if cfg.mode == "max" else 1.0
    return tb + (sign * cfg.lam) * reg, tb, reg


def path_reg_loss(model, sample, cfg, rng=None):
    """Sum of per-edge regularizer values along one trajectory (Bernoulli-thinned when dropout_p < 1)."""
    if cfg.mode == "none":
        return ad.Tensor(0.0)
    return ad.reshape(batch_losses(model, [sample], cfg, rng)[2], ())


def combined_loss(model, sample, cfg, rng=None):
    """L_TB + lam * L_reg (min, ub), L_TB - lam * L_reg (max), or L_TB (none)."""
    return ad.reshape(batch_losses(model, [sample], cfg, rng)[0], ())
