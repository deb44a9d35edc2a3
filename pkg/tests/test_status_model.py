from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from statuslink.status_model import (
    HOLD,
    InsufficientHistory,
    StatusHistory,
    StatusModel,
    StatusVector,
    estimate_lms,
    predict,
    predict_with_input,
    right_pinv,
    rollout,
)


def lms_oracle(x: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least squares through LAPACK's gelsd, not our SVD code."""
    w, s = x[1:, :2], x[:-1, :]
    sol, *_ = np.linalg.lstsq(s, w, rcond=rcond)
    return sol.T


def test_history_rejects_gaps():
    h = StatusHistory(10)
    h.append(3, (1, 2, 3))
    with pytest.raises(ValueError):
        h.append(5, (1, 2, 3))


def test_history_ring_keeps_latest():
    h = StatusHistory.from_samples([(k, 0, 0) for k in range(10)], start_slot=5, capacity=4)
    assert len(h) == 4 and h.first_slot == 11 and h.last_slot == 14
    assert h.latest(2)[:, 0].tolist() == [8.0, 9.0]
    assert h.at(12).distance == 7.0
    with pytest.raises(KeyError):
        h.at(10)


def test_insufficient_history():
    h = StatusHistory.from_samples([(1, 1, 0)] * 50)
    with pytest.raises(InsufficientHistory):
        estimate_lms(h, window=100)


def test_exact_linear_system_is_recovered():
    rng = np.random.default_rng(3)
    true = np.array([[0.9, 0.05, 0.0], [-0.1, 0.95, 0.001]])
    s = rng.normal(size=3)
    samples = [s]
    for _ in range(120):
        a = rng.normal()
        d, v = true @ samples[-1]
        samples.append(np.array([d, v, a]))
    model = estimate_lms(StatusHistory.from_samples(samples), window=100)
    np.testing.assert_allclose(model.coeffs, true, atol=1e-10)


@pytest.mark.parametrize("kind", ["full", "zero_accel", "collinear"])
def test_lms_matches_lstsq_oracle(kind):
    rng = np.random.default_rng({"full": 1, "zero_accel": 2, "collinear": 3}[kind])
    for _ in range(50):
        x = rng.normal(size=(101, 3)) * [5, 2, 1] + [10, 20, 0]
        if kind == "zero_accel":
            x[:, 2] = 0.0
        elif kind == "collinear":
            x[:, 0] = 0.5 * x[:, 1]
        got = estimate_lms(StatusHistory.from_samples(x), window=100).coeffs
        np.testing.assert_allclose(got, lms_oracle(x), rtol=0, atol=1e-9)


def test_right_pinv_all_zero():
    assert np.all(right_pinv(np.zeros((3, 5))) == 0)


def test_ridge_zero_is_plain_fit_and_large_ridge_is_anchor():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(101, 3))
    h = StatusHistory.from_samples(x)
    assert estimate_lms(h, ridge=0.0) == estimate_lms(h)
    far = estimate_lms(h, ridge=1e12).coeffs
    np.testing.assert_allclose(far, np.array(HOLD), atol=1e-9)


def test_ridge_fit_is_ridge_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(101, 3)) + [10, 20, 0]
    lam = 7.0 * 100
    w, s = x[1:, :2].T, x[:-1, :].T
    a0 = np.array(HOLD)
    # stacked least squares: rows of [S^T; sqrt(lam) I] against [W^T; sqrt(lam) A0^T]
    big_s = np.vstack([s.T, np.sqrt(lam) * np.eye(3)])
    big_w = np.vstack([w.T, np.sqrt(lam) * a0.T])
    want = np.linalg.lstsq(big_s, big_w, rcond=None)[0].T
    got = estimate_lms(StatusHistory.from_samples(x), ridge=7.0).coeffs
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_ridge_fit_stays_bounded_on_cruise_window():
    # constant-speed cruise with tiny acceleration jitter: plain pinv may return
    # arbitrary coefficients, the anchored fit stays near the hold model
    x = np.zeros((101, 3))
    x[:, 0] = 10.0 + 1e-7 * np.arange(101)
    x[:, 1] = 22.2
    x[:, 2] = 1e-6 * np.sin(np.arange(101))
    coeffs = estimate_lms(StatusHistory.from_samples(x), ridge=100.0).coeffs
    assert np.max(np.abs(coeffs - np.array(HOLD))) < 1e-2


def test_predict_and_known_input():
    m = StatusModel(np.array([[1, 0.001, 0], [0, 1, 0.001]]))
    prev = StatusVector(10.0, 20.0, 1.0)
    assert predict(m, prev) == pytest.approx((10.02, 20.001, 1.0))
    got = predict_with_input(m.flat, prev, -2.0)
    assert got[:2] == pytest.approx((10.02, 20.001)) and got[2] == -2.0
    assert predict_with_input(m.flat, prev, None)[2] == 1.0


def test_rollout_length_and_chaining():
    m = StatusModel(np.array([[1, 0, 0], [0, 1, 0.5]]))
    out = rollout(m, (0, 0, 2), 3)
    assert [s.velocity for s in out] == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        rollout(m, (0, 0, 0), 0)


def test_model_rejects_non_finite():
    with pytest.raises(ValueError):
        StatusModel(np.array([[np.nan, 0, 0], [0, 0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6),
       st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(-5, 5)))
def test_predict_is_linear(coeffs, s):
    m = StatusModel(np.array(coeffs).reshape(2, 3))
    p1 = np.array(predict(m, s)[:2])
    p2 = np.array(predict(m, tuple(2 * x for x in s))[:2])
    np.testing.assert_allclose(p2, 2 * p1, rtol=1e-12, atol=1e-9)
