"""Exact and empirical evaluation of a trained sampler."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from .hypergrid import all_coords, coords_to_index

DP_GUARD = 10**6
BUFFER_CAPACITY = 200_000


def exact_terminal_distribution(model, guard=DP_GUARD):
    """P_T(x) for every cell, as a flat array in row-major cell order.

    Forward DP over the cells sorted by coordinate sum: rho(s_0) = 1,
    rho(s') = sum over parents of rho(s) P_F(s'|s), P_T(x) = rho(x) P_F(stop|x).
    """
    spec = model.spec
    cells = all_coords(spec, limit=guard)
    pf = np.exp(model.log_pf_values(cells))
    rho = np.zeros(len(cells))
    rho[0] = 1.0
    level = cells.sum(axis=1)
    strides = spec.side ** np.arange(spec.dims - 1, -1, -1)
    for depth in range(level.max()):
        idx = np.flatnonzero(level == depth)
        for d in range(spec.dims):
            ok = idx[cells[idx, d] < spec.side - 1]
            rho[ok + strides[d]] += rho[ok] * pf[ok, d]
    return rho * pf[:, spec.dims]


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def kl_divergence(empirical, true_dist):
    """KL(P_hat || P_true); cells with no visits contribute nothing."""
    counts = np.asarray(getattr(empirical, "counts", empirical), dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("empirical distribution is empty")
    p_hat = counts / counts.sum()
    q = np.asarray(true_dist, dtype=np.float64)
    seen = p_hat > 0
    return float((p_hat[seen] * np.log(p_hat[seen] / q[seen])).sum())


class VisitBuffer:
    """Ring buffer of the most recent terminal cells with running per-cell counts."""

    def __init__(self, n_cells, capacity=BUFFER_CAPACITY):
        self.capacity = capacity
        self.ring = np.zeros(capacity, dtype=np.intp)
        self.counts = np.zeros(n_cells, dtype=np.int64)
        self.total = 0

    def __len__(self):
        return min(self.total, self.capacity)

    def add(self, cell_ids):
        for cid in np.atleast_1d(cell_ids):
            slot = self.total % self.capacity
            if self.total >= self.capacity:
                self.counts[self.ring[slot]] -= 1
            self.ring[slot] = cid
            self.counts[cid] += 1
            self.total += 1


@dataclass
class MetricRecord:
    step: int
    trajectories: int
    modes_found: int
    kl: float
    loss_tb: float
    loss_ot: float


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    found_modes: set = field(default_factory=set)

    @property
    def modes_found(self):
        return len(self.found_modes)

    def log(self, record):
        if self.records:
            last = self.records[-1]
            if record.step <= last.step:
                raise ValueError("metric steps must strictly increase")
            if record.modes_found < last.modes_found:
                raise ValueError("modes_found cannot decrease")
        self.records.append(record)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f.name for f in fields(MetricRecord)])
            for rec in self.records:
                writer.writerow([v if isinstance(v, int) else f"{v:.12e}" for v in astuple(rec)])

    @staticmethod
    def read_csv(path):
        out = RunMetrics()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                out.records.append(MetricRecord(int(row["step"]), int(row["trajectories"]),
                                                int(row["modes_found"]), float(row["kl"]),
                                                float(row["loss_tb"]), float(row["loss_ot"])))
        return out


def record_visit(buffer, terminal, mode_set, metrics, spec):
    """Push a terminal state into the buffer; a first visit to a mode bumps ``metrics.modes_found``."""
    if not terminal.terminal:
        raise ValueError(f"{terminal!r} is not terminal")
    cid = int(coords_to_index(spec, np.array(terminal.coords)))
    buffer.add(cid)
    if terminal in mode_set:
        metrics.found_modes.add(cid)
    return buffer, metrics
