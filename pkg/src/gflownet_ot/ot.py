"""Discrete optimal transport: exact transportation simplex, log-domain Sinkhorn,
and the closed form for a nonpositive diagonal cost."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

MAX_EXACT_SIZE = 64


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class DiscreteMeasure:
    weights: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = _check_weights(self.weights, "weights")
        if not self.labels:
            self.labels = list(range(len(self.weights)))
        if len(self.labels) != len(self.weights):
            raise ValueError("one label per support point is required")


@dataclass
class TransportPlan:
    matrix: np.ndarray
    value: float
    converged: bool = True
    residual: float = 0.0
    n_iter: int = 0

    def marginal_violation(self, alpha, beta):
        return max(np.abs(self.matrix.sum(axis=1) - alpha).max(),
                   np.abs(self.matrix.sum(axis=0) - beta).max())


def _check_weights(w, name, atol=1e-9):
    w = np.asarray(getattr(w, "weights", w), dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (got {w.sum():.12g})")
    return w


def _check_problem(alpha, beta, cost):
    alpha = _check_weights(alpha, "alpha")
    beta = _check_weights(beta, "beta")
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (len(alpha), len(beta)):
        raise ValueError(f"cost shape {cost.shape} does not match marginals ({len(alpha)}, {len(beta)})")
    if not np.isfinite(cost).all():
        raise ValueError("cost entries must be finite")
    return alpha, beta, cost


# exact ----------------------------------------------------------------------

def _northwest_corner(alpha, beta):
    k, l = len(alpha), len(beta)
    a, b = alpha.copy(), beta.copy()
    flow = np.zeros((k, l))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        a[i] -= x
        b[j] -= x
        basis.append((i, j))
        if i == k - 1 and j == l - 1:
            break
        if i == k - 1:
            j += 1
        elif j == l - 1 or a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, k, l):
    rows = [[] for _ in range(k)]
    cols = [[] for _ in range(l)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(k, np.nan)
    v = np.full(l, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, n = queue.popleft()
        if kind == "r":
            for j in rows[n]:
                if np.isnan(v[j]):
                    v[j] = cost[n, j] - u[n]
                    queue.append(("c", j))
        else:
            for i in cols[n]:
                if np.isnan(u[i]):
                    u[i] = cost[i, n] - v[n]
                    queue.append(("r", i))
    return u, v


def _tree_path(basis, k, l, start_col, end_row):
    """Cells on the basis-tree path from column node ``start_col`` to row node ``end_row``."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    start, goal = ("c", start_col), ("r", end_row)
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = node
                queue.append(nxt)
    cells = []
    node = goal
    while prev[node] is not None:
        p = prev[node]
        cells.append((node[1], p[1]) if node[0] == "r" else (p[1], node[1]))
        node = p
    return cells[::-1]


def exact_ot(alpha, beta, cost, max_size=MAX_EXACT_SIZE, max_iter=10_000):
    """Minimize <C, pi> over couplings of ``alpha`` and ``beta``.

    Transportation simplex started from the northwest-corner basis, with
    MODI potentials for pricing.  Returns ``(value, TransportPlan)``.
    """
    alpha, beta, cost = _check_problem(alpha, beta, cost)
    k, l = cost.shape
    if max(k, l) > max_size:
        raise ValueError(f"exact_ot is limited to {max_size} support points per side, got {k}x{l}")
    flow, basis = _northwest_corner(alpha, beta)
    tol = 1e-12 * max(1.0, np.abs(cost).max())
    degenerate_run = 0
    for it in range(max_iter):
        u, v = _potentials(cost, basis, k, l)
        reduced = cost - u[:, None] - v[None, :]
        in_basis = np.zeros((k, l), dtype=bool)
        for cell in basis:
            in_basis[cell] = True
        reduced[in_basis] = 0.0
        candidates = np.argwhere(reduced < -tol)
        if len(candidates) == 0:
            break
        if degenerate_run > 50:
            # Bland's rule once degenerate pivots pile up
            ie, je = map(int, candidates[0])
        else:
            ie, je = map(int, np.unravel_index(np.argmin(reduced), reduced.shape))
        path = _tree_path(basis, k, l, je, ie)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] == theta))
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ie, je] += theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ie, je))
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    else:
        raise RuntimeError(f"exact_ot did not reach optimality in {max_iter} pivots")
    flow = np.maximum(flow, 0.0)
    value = float((cost * flow).sum())
    return value, TransportPlan(flow, value, True, 0.0, it)


# entropic -------------------------------------------------------------------

def sinkhorn(alpha, beta, cost, epsilon=0.01, max_iters=500, tol=1e-6):
    """Log-domain Sinkhorn.  Returns ``(<C, pi_eps>, TransportPlan)``.

    The column marginal is exact after every sweep; iteration stops once the
    row-marginal L1 violation drops to ``tol``.  Running out of iterations
    emits a ``ConvergenceWarning`` and the plan records the residual.
    """
    alpha, beta, cost = _check_problem(alpha, beta, cost)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(alpha), np.log(beta)
    f = np.zeros(len(alpha))
    g = np.zeros(len(beta))
    residual = np.inf
    for it in range(1, max_iters + 1):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        log_plan = (f[:, None] + g[None, :] - cost) / epsilon
        plan = np.exp(log_plan)
        residual = np.abs(plan.sum(axis=1) - alpha).sum()
        if residual <= tol:
            break
    converged = residual <= tol
    if not converged:
        warnings.warn(f"sinkhorn stopped after {max_iters} iterations with marginal residual {residual:.3g}",
                      ConvergenceWarning, stacklevel=2)
    value = float((cost * plan).sum())
    return value, TransportPlan(plan, value, converged, float(residual), it)


# closed form ----------------------------------------------------------------

def diagonal_ot(alpha, beta, c_diag):
    """OT value for a square cost that is zero off the diagonal and c_i <= 0 on it: sum_i min(a_i, b_i) c_i."""
    alpha = _check_weights(alpha, "alpha")
    beta = _check_weights(beta, "beta")
    c_diag = np.asarray(c_diag, dtype=np.float64)
    if not (len(alpha) == len(beta) == len(c_diag)):
        raise ValueError("diagonal_ot needs equal support sizes")
    if (c_diag > 0).any():
        raise ValueError("diagonal costs must be nonpositive")
    return float((np.minimum(alpha, beta) * c_diag).sum())


def diagonal_plan(alpha, beta):
    """A coupling attaining ``diagonal_ot``: matched mass on the diagonal, leftovers spread proportionally."""
    alpha = _check_weights(alpha, "alpha")
    beta = _check_weights(beta, "beta")
    m = np.minimum(alpha, beta)
    rest = 1.0 - m.sum()
    plan = np.diag(m)
    if rest > 0:
        plan += np.outer(alpha - m, beta - m) / rest
    return plan
