"""Online linear status model: LMS estimation and one-step prediction.

A status is the kinematic triple ``[distance, velocity, acceleration]``.  The
model maps the previous full status to the current ``[distance, velocity]``;
acceleration is a control input and is carried forward by zero-order hold.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

# Singular values below RCOND * sigma_max are treated as zero.
RCOND = 1e-10

# Hold model for 1 ms slots: distance kept, velocity integrates the acceleration.
HOLD = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.001))


class InsufficientHistory(ValueError):
    pass


class StatusVector(NamedTuple):
    distance: float
    velocity: float
    acceleration: float

    @classmethod
    def zero(cls) -> StatusVector:
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StatusModel:
    """2x3 coefficient matrix shared by source and destination."""

    coeffs: np.ndarray
    input_depth: int = 1
    estimated_at: int = -1
    flat: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(a)):
            raise ValueError("model coefficients must be finite")
        if self.input_depth < 1:
            raise ValueError("input_depth must be >= 1")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)
        # plain floats for the per-slot hot path
        object.__setattr__(self, "flat", tuple(float(x) for x in a.ravel()))

    def __eq__(self, other):
        if not isinstance(other, StatusModel):
            return NotImplemented
        return self.flat == other.flat and self.input_depth == other.input_depth

    def __hash__(self):
        return hash(self.flat)

    @classmethod
    def zeros(cls, estimated_at: int = -1) -> StatusModel:
        return cls(np.zeros((2, 3)), estimated_at=estimated_at)

    @classmethod
    def random(cls, rng: np.random.Generator, low=-1.0, high=1.0) -> StatusModel:
        return cls(rng.uniform(low, high, size=(2, 3)))


class StatusHistory:
    """Ring buffer of consecutive (slot, StatusVector) samples."""

    def __init__(self, capacity: int = 1000):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = capacity
        self._buf: deque[StatusVector] = deque(maxlen=capacity)
        self.last_slot: int | None = None

    def append(self, slot: int, status: Sequence[float]) -> None:
        if self.last_slot is not None and slot != self.last_slot + 1:
            raise ValueError(
                f"history slots must be consecutive: got {slot} after {self.last_slot}"
            )
        self._buf.append(status)
        self.last_slot = slot

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def first_slot(self) -> int | None:
        if self.last_slot is None:
            return None
        return self.last_slot - len(self._buf) + 1

    def latest(self, n: int) -> np.ndarray:
        """The most recent ``n`` samples as an (n, 3) array, oldest first."""
        if n > len(self._buf):
            raise InsufficientHistory(f"need {n} samples, have {len(self._buf)}")
        buf = self._buf
        return np.array([buf[i] for i in range(len(buf) - n, len(buf))], dtype=np.float64)

    def at(self, slot: int) -> StatusVector:
        first = self.first_slot
        if first is None or not first <= slot <= self.last_slot:
            raise KeyError(slot)
        return self._buf[slot - first]

    @classmethod
    def from_samples(cls, samples: Iterable[Sequence[float]], start_slot: int = 0,
                     capacity: int | None = None) -> StatusHistory:
        samples = [StatusVector(*map(float, s)) for s in samples]
        hist = cls(capacity or max(2, len(samples)))
        for k, s in enumerate(samples):
            hist.append(start_slot + k, s)
        return hist


def right_pinv(s: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Minimum-norm pseudo-inverse via SVD with a relative singular-value cutoff."""
    u, sv, vt = np.linalg.svd(s, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return np.zeros(s.T.shape)
    keep = sv > rcond * sv[0]
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return (vt.T * inv) @ u.T


def estimate_lms(history: StatusHistory, window: int = 100, slot: int | None = None,
                 ridge: float = 0.0, anchor=HOLD) -> StatusModel:
    """Fit ``A`` with ``w(t) = A s(t-1)`` over the last ``window`` transitions.

    ``A = W S^+`` where the columns of ``W`` are the reduced vectors
    ``[d, v]`` at ``t .. t-window+1`` and the columns of ``S`` are the full
    vectors one slot earlier.

    With ``ridge > 0`` the fit is shrunk towards ``anchor`` instead:
    ``A = (W S^T + lam A0)(S S^T + lam I)^-1`` with ``lam = ridge * window``.
    Directions the window barely excites (a platoon cruising at constant
    speed) then fall back to the anchor rather than to arbitrary
    coefficients fitted on rounding noise or sensor noise.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if window < 3:
        raise ValueError("window must be >= 3")
    if len(history) < window + 1:
        raise InsufficientHistory(
            f"need {window + 1} consecutive samples, have {len(history)}"
        )
    x = history.latest(window + 1)
    w = x[1:, :2].T      # 2 x window, oldest first
    s = x[:-1, :].T      # 3 x window
    if ridge == 0.0:
        a = w @ right_pinv(s)
    else:
        lam = ridge * window
        a0 = np.asarray(anchor, dtype=np.float64).reshape(2, 3)
        gram = s @ s.T + lam * np.eye(3)
        a = np.linalg.solve(gram, (w @ s.T + lam * a0).T).T
    return StatusModel(a, estimated_at=history.last_slot if slot is None else slot)


def predict(model: StatusModel, prev: StatusVector) -> StatusVector:
    c = model.flat
    d, v, a = prev
    return StatusVector(c[0] * d + c[1] * v + c[2] * a, c[3] * d + c[4] * v + c[5] * a, a)


def predict_with_input(flat: tuple, prev: StatusVector, accel: float | None) -> StatusVector:
    """``predict`` with the held acceleration replaced by a known control input."""
    d, v, a = prev
    return StatusVector(
        flat[0] * d + flat[1] * v + flat[2] * a,
        flat[3] * d + flat[4] * v + flat[5] * a,
        a if accel is None else accel,
    )


def rollout(model: StatusModel, seed: StatusVector, steps: int) -> list[StatusVector]:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = []
    cur = StatusVector(*seed)
    for _ in range(steps):
        cur = predict(model, cur)
        out.append(cur)
    return out
