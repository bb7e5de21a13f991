"""FedAvg reference baseline (flat topology, global model only).

Per round the sampled devices copy the server model, take a fixed number
of local full-batch gradient steps, and the server averages the results
weighted by device sample counts (the original weighting, unlike the
uniform weighting used by the multi-tier loop).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .envelope import DIVERGENCE_LIMIT
from .errors import ConfigurationError, NumericError
from .metrics import MetricsRecord, evaluate_gm
from .models import LossModel, as_param_vector
from .seeding import rng_for


@dataclass(frozen=True)
class FedAvgConfig:
    rounds: int
    local_steps: int
    step_size: float
    participation_fraction: float = 1.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.rounds < 1 or self.local_steps < 1:
            raise ConfigurationError("rounds and local_steps must be >= 1")
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        if not (0.0 < self.participation_fraction <= 1.0):
            raise ConfigurationError("participation_fraction must lie in (0, 1]")


def _local_train(x, model, data, steps, step_size):
    theta = x.copy()
    for _ in range(steps):
        theta = theta - step_size * model.grad(theta, data)
    return theta


def run_fedavg(config: FedAvgConfig, devices, model: LossModel, x0=None):
    """Train a single global model across a flat device list.

    ``devices`` is a list of objects with .device_id, .train, and optionally
    .val (for per-round evaluation). Returns (final x, metrics records).
    """
    devices = sorted(devices, key=lambda d: d.device_id)
    if not devices:
        raise ConfigurationError("need at least one device")
    x = as_param_vector(x0 if x0 is not None else np.zeros(model.dim)).copy()

    weights = {}
    for dev in devices:
        weights[dev.device_id] = float(len(dev.train)) if dev.train is not None else 1.0

    records = []
    started = time.perf_counter()
    can_eval = all(dev.val is not None and len(dev.val) > 0 for dev in devices)
    for t in range(config.rounds):
        if config.participation_fraction < 1.0:
            rng = rng_for(config.seed, "fedavg-participation", t)
            n_active = math.ceil(config.participation_fraction * len(devices))
            picked = sorted(rng.choice(len(devices), size=n_active, replace=False))
            active = [devices[i] for i in picked]
        else:
            active = devices

        solved = {}
        for dev in active:
            solved[dev.device_id] = _local_train(
                x, model, dev.train, config.local_steps, config.step_size
            )
        total_w = sum(weights[d.device_id] for d in active)
        x = np.zeros_like(x)
        for dev in active:
            x += (weights[dev.device_id] / total_w) * solved[dev.device_id]
        if not np.all(np.isfinite(x)) or float(x @ x) > DIVERGENCE_LIMIT**2:
            raise NumericError(f"FedAvg diverged at round {t}")

        if can_eval and ((t % config.eval_every == 0) or t == config.rounds - 1):
            gm_acc, gm_loss = evaluate_gm(x, devices, model)
            records.append(
                MetricsRecord(
                    t=t, pm_acc=gm_acc, gm_acc=gm_acc, pm_loss=gm_loss,
                    gm_loss=gm_loss, pm_acc_weighted=gm_acc,
                    wall_time=time.perf_counter() - started,
                )
            )
    return x, records
