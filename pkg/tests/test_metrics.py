from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from statuslink.sim.config import make_config
from statuslink.sim.metrics import aggregate, compute_aoi, renewal_mean_aoi, replicate


def test_aoi_sawtooth():
    aoi = compute_aoi([(3, 2), (7, 6)], 10)
    assert aoi.tolist() == [0, 1, 2, 1, 2, 3, 4, 1, 2, 3]


def test_aoi_one_slot_stale_every_slot():
    aoi = compute_aoi([(t, t - 1) for t in range(1, 50)], 50)
    assert aoi[0] == 0 and np.all(aoi[1:] == 1)


def test_aoi_ignores_older_payloads_and_offsets():
    aoi = compute_aoi([(5, 4), (6, 1)], 4, start=5)
    assert aoi.tolist() == [1, 2, 3, 4]


def test_aoi_input_checks():
    with pytest.raises(ValueError):
        compute_aoi([(5, 1), (3, 1)], 10)
    with pytest.raises(ValueError):
        compute_aoi([(2, 3)], 10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 300), st.integers(0, 50)), max_size=30))
def test_aoi_matches_direct_definition(raw):
    deliveries = sorted((slot, max(0, slot - lag)) for slot, lag in raw)
    n = 320
    got = compute_aoi(deliveries, n)
    for t in range(n):
        newest = max([ts for slot, ts in deliveries if slot <= t], default=0)
        assert got[t] == t - newest


@pytest.mark.parametrize("period,q", [(1, 1.0), (40, 1.0), (40, 0.5), (10, 0.8)])
def test_renewal_formula_against_simulated_sawtooth(period, q):
    rng = np.random.default_rng(period)
    n = 400_000
    deliveries = [(t, t) for t in range(0, n, period) if rng.random() < q]
    aoi = compute_aoi(deliveries, n)
    want = renewal_mean_aoi(period, q)
    assert aoi[50_000:].mean() == pytest.approx(want, rel=0.03, abs=0.01)


def test_aggregate_fields():
    agg = aggregate([{"seed": 1, "x": 1.0}, {"seed": 0, "x": 3.0}], fields=["x"])
    assert agg["x"] == {"mean": 2.0, "min": 1.0, "max": 3.0}
    assert agg["seeds"] == [0, 1] and agg["runs"] == 2


def test_replicate_order_invariant():
    cfg = make_config(platoons=1, vehicles=3, duration=3000, warmup=500,
                      mode="status_unaware")
    a = replicate(cfg, [0, 1, 2])
    assert a == replicate(cfg, [2, 0, 1])
    assert a["seeds"] == [0, 1, 2] and a["min_safe_distance"]["min"] > 0
