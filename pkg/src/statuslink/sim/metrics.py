"""Age of information and seed replication."""
from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import ScenarioConfig


def compute_aoi(deliveries: Iterable[tuple[int, int]], n_slots: int,
                start: int = 0) -> np.ndarray:
    """Per-slot age of the freshest delivered status on one link.

    ``deliveries`` holds ``(reception_slot, payload_timestamp)`` pairs sorted
    by reception slot.  ``AoI(t) = t - newest timestamp received by t``; before
    the first delivery the reference timestamp is 0.
    """
    if n_slots < 0:
        raise ValueError("n_slots must be >= 0")
    ref = np.zeros(n_slots, dtype=np.int64)
    newest = 0
    last_slot = -1
    marks = []
    for slot, ts in deliveries:
        if slot < last_slot:
            raise ValueError("deliveries must be sorted by reception slot")
        if ts > slot:
            raise ValueError("payload timestamp lies after its reception")
        last_slot = slot
        if ts > newest:
            newest = ts
            marks.append((slot, ts))
    prev_slot, prev_ts = start, 0
    for slot, ts in marks:
        lo, hi = max(prev_slot, start) - start, min(slot, start + n_slots) - start
        if hi > lo:
            ref[lo:hi] = prev_ts
        prev_slot, prev_ts = slot, ts
    lo = max(prev_slot, start) - start
    if lo < n_slots:
        ref[lo:] = prev_ts
    return np.arange(start, start + n_slots, dtype=np.int64) - ref


def renewal_mean_aoi(period: int, delivery_prob: float) -> float:
    """Mean AoI of a periodic source with independent losses and zero latency.

    Deliveries form a renewal process whose gaps are ``period`` times a
    geometric count with success ``q``; averaging the sawtooth gives
    ``(period * (2 - q) / q - 1) / 2`` in slots.
    """
    q = delivery_prob
    if period < 1 or not 0 < q <= 1:
        raise ValueError("need period >= 1 and 0 < delivery_prob <= 1")
    return (period * (2.0 - q) / q - 1.0) / 2.0


SCALAR_FIELDS = ("min_safe_distance", "max_gap_reduction", "mean_recovery_error",
                 "max_recovery_error", "mean_aoi", "status_packets", "collisions",
                 "hd_losses", "delivered", "transmissions", "occupancy", "mean_window_cost",
                 "crash")


def aggregate(metrics: Sequence[dict], fields: Sequence[str] = SCALAR_FIELDS) -> dict:
    """``{field: {"mean", "min", "max"}}`` over runs; independent of run order."""
    if not metrics:
        raise ValueError("need at least one run")
    out = {}
    for name in fields:
        vals = [float(m[name]) for m in metrics if name in m]
        if not vals:
            continue
        out[name] = {"mean": math.fsum(vals) / len(vals), "min": min(vals), "max": max(vals)}
    out["runs"] = len(metrics)
    out["seeds"] = sorted(m["seed"] for m in metrics)
    return out


def replicate(config: ScenarioConfig, seeds: Sequence[int],
              runner: Optional[Callable] = None, workers: int = 1) -> dict:
    """Run ``config`` once per seed and aggregate the scalar metrics."""
    if not seeds:
        raise ValueError("need at least one seed")
    configs = [config.replace(seed=int(s)) for s in seeds]
    return aggregate(run_many(configs, runner, workers))


def _metrics_of(cfg: ScenarioConfig) -> dict:
    from .engine import run
    return run(cfg).metrics


def run_many(configs: Sequence[ScenarioConfig], runner: Optional[Callable] = None,
             workers: int = 1) -> list[dict]:
    """Metrics of independent runs, in input order.

    ``runner`` maps a config to its metrics dict.  With ``workers > 1`` the
    runs go to a process pool (the runner must then be picklable).
    """
    runner = runner or _metrics_of
    if workers <= 1 or len(configs) <= 1:
        return [runner(c) for c in configs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(runner, configs))
