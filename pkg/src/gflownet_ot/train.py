"""Training loop: sample a batch, average the combined loss, take one Adam step, log metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .evaluator import BUFFER_CAPACITY, MetricRecord, RunMetrics, VisitBuffer, kl_divergence
from .hypergrid import EnvSpec, coords_to_index, mode_mask, true_distribution
from .optim import Adam
from .path_reg import RegularizerConfig, batch_losses
from .policy import PolicyModel
from .trajectories import sample_batch

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    env: EnvSpec = field(default_factory=lambda: EnvSpec(4, 8, 1e-3))
    steps: int = 62_500
    batch: int = 16
    lr_policy: float = 1e-3
    lr_logz: float = 0.1
    explore_alpha: float = 0.01
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    seed: int = 0
    hidden: int = 256
    uniform_pb: bool = False
    log_every: int = 500
    buffer_capacity: int = BUFFER_CAPACITY
    out: str | None = None

    def __post_init__(self):
        for name in ("steps", "batch", "hidden", "log_every", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.lr_policy > 0 and self.lr_logz > 0):
            raise ValueError("learning rates must be positive")
        if not 0 <= self.explore_alpha <= 1:
            raise ValueError("explore_alpha must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: PolicyModel
    metrics: RunMetrics
    all_modes_at: int | None
    seconds: float


def _streams(seed):
    init, sampling, dropout = np.random.SeedSequence(seed).spawn(3)
    return (int(init.generate_state(1)[0]), np.random.default_rng(sampling), np.random.default_rng(dropout))


def train(config, callback=None):
    """Run one training job.  ``callback(step, model, metrics)`` is invoked at each logging step."""
    spec = config.env
    init_seed, rng_sample, rng_drop = _streams(config.seed)
    model = PolicyModel(spec, hidden=config.hidden, uniform_pb=config.uniform_pb, seed=init_seed)
    opt = Adam([{"params": model.policy_parameters(), "lr": config.lr_policy},
                {"params": [model.log_z], "lr": config.lr_logz}])
    target, _ = true_distribution(spec)
    is_mode = mode_mask(spec)
    n_modes = int(is_mode.sum())
    buffer = VisitBuffer(spec.n_states, config.buffer_capacity)
    metrics = RunMetrics()
    all_modes_at = None
    window_tb, window_ot, window_n = 0.0, 0.0, 0
    start = time.perf_counter()

    for step in range(1, config.steps + 1):
        samples = sample_batch(model, config.batch, config.explore_alpha, rng_sample)
        try:
            combined, tb, reg = batch_losses(model, samples, config.reg, rng_drop)
            loss = ad.mean(combined)
            grads = ad.grad(loss, opt.params)
        except ad.NonFiniteError as exc:
            raise RuntimeError(f"non-finite loss at step {step} (seed {config.seed}): {exc}") from exc
        opt.step(grads)

        ids = coords_to_index(spec, np.array([s.coords[-1] for s in samples]))
        buffer.add(ids)
        metrics.found_modes.update(ids[is_mode[ids]].tolist())
        if all_modes_at is None and metrics.modes_found == n_modes:
            all_modes_at = step * config.batch
        window_tb += float(tb.value.mean())
        window_ot += float(reg.value.mean())
        window_n += 1

        if step % config.log_every == 0 or step == config.steps:
            rec = MetricRecord(step, step * config.batch, metrics.modes_found, kl_divergence(buffer, target),
                               window_tb / window_n, window_ot / window_n)
            metrics.log(rec)
            window_tb, window_ot, window_n = 0.0, 0.0, 0
            logger.info("step %d modes %d kl %.4f tb %.4g ot %.4g", rec.step, rec.modes_found, rec.kl,
                        rec.loss_tb, rec.loss_ot)
            if callback is not None:
                callback(step, model, metrics)

    result = TrainResult(model, metrics, all_modes_at, time.perf_counter() - start)
    if config.out:
        write_outputs(config, result)
    return result


def write_outputs(config, result):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(out / "metrics.csv")
    result.model.save(out / "model.npz")
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    last = result.metrics.records[-1]
    summary = {"all_modes_at": result.all_modes_at, "modes_found": last.modes_found, "kl": last.kl,
               "modes_total": int(mode_mask(config.env).sum()), "seconds": result.seconds}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
