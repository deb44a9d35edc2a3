"""Longitudinal platoon kinematics, sensing and the CACC law."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .status_model import StatusVector

A_MIN = -2.94
A_MAX = 4.0
VEHICLE_LENGTH = 5.0
DT = 0.001


@dataclass(frozen=True)
class VehicleState:
    position: float
    velocity: float
    acceleration: float = 0.0
    length: float = VEHICLE_LENGTH
    platoon: int = 0
    index: int = 1          # leader is 1


@dataclass(frozen=True)
class ControlWeights:
    """Gains of the linear CACC law.

    The defaults follow the usual PATH-style parameterisation with natural
    frequency 1 rad/s, damping 1 and a 0.5 leader-feedforward weight:
    gap gain -wn^2, relative-speed gain -(2*xi - C1*(xi + sqrt(xi^2 - 1)))*wn,
    leader-speed gain -C1*(xi + sqrt(xi^2 - 1))*wn, predecessor weight
    1 - C1, leader weight C1.  Signs match the error terms of
    :func:`cacc_acceleration`.
    """

    w1: float = -1.0
    w2: float = -1.5
    w3: float = -0.5
    w4: float = 0.5
    w5: float = 0.5
    d_des: float = 10.0

    @classmethod
    def from_design(cls, wn: float = 1.0, xi: float = 1.0, c1: float = 0.5,
                    d_des: float = 10.0) -> ControlWeights:
        root = xi + math.sqrt(max(xi * xi - 1.0, 0.0))
        return cls(-wn * wn, -(2 * xi - c1 * root) * wn, -c1 * root * wn,
                   1.0 - c1, c1, d_des)

    def as_tuple(self) -> tuple:
        return (self.w1, self.w2, self.w3, self.w4, self.w5)


def clamp_accel(a: float, a_min: float = A_MIN, a_max: float = A_MAX) -> float:
    return a_min if a < a_min else a_max if a > a_max else a


def cacc_acceleration(n: int, gap: float, v: float, v_front: float, v_leader: float,
                      a_des_front: float, a_des_leader: float, weights: ControlWeights,
                      a_min: float = A_MIN, a_max: float = A_MAX) -> float:
    """Desired acceleration of follower ``n`` (n >= 2) from recovered statuses."""
    if n < 2:
        raise ValueError("the control law applies to followers (n >= 2)")
    w = weights
    raw = (w.w1 * (w.d_des - gap) + w.w2 * (v - v_front) + w.w3 * (v - v_leader)
           + w.w4 * a_des_front + w.w5 * a_des_leader)
    return clamp_accel(raw, a_min, a_max)


SDR_RAMP_START = 478
SDR_RAMP_END = 2478
SDR_PEAK = 4.0


def leader_profile_sdr(t: int) -> float:
    """Parabolic acceleration bump between slots 478 and 2478, peak 4 m/s^2."""
    if SDR_RAMP_START <= t <= SDR_RAMP_END:
        half = (SDR_RAMP_END - SDR_RAMP_START) / 2.0
        return SDR_PEAK / (half * half) * (SDR_RAMP_END - t) * (t - SDR_RAMP_START)
    return 0.0


# (start s, end s, v_start, v_end) of the ramps; velocity is held in between
PLATOON_SEGMENTS = ((0.0, 5.0, 10.0, 22.2), (15.0, 20.0, 22.2, 9.7), (20.0, 35.0, 9.7, 22.2))


def leader_velocity_platoon(t: int, dt: float = DT) -> float:
    s = t * dt
    v = PLATOON_SEGMENTS[0][2]
    for t0, t1, v0, v1 in PLATOON_SEGMENTS:
        if s < t0:
            break
        if s <= t1:
            return v0 + (v1 - v0) * (s - t0) / (t1 - t0)
        v = v1
    return v


def leader_profile_platoon(t: int, dt: float = DT) -> float:
    """Leader acceleration: slope of the active velocity ramp, clamped."""
    s = t * dt
    for t0, t1, v0, v1 in PLATOON_SEGMENTS:
        if t0 <= s < t1:
            return clamp_accel((v1 - v0) / (t1 - t0))
    return 0.0


def impulse_profile(start: int = 1000, duration: int = 1000, dv: float = 1.0,
                    dt: float = DT) -> Callable[[int], float]:
    """Leader gains ``dv`` over ``duration`` slots and then loses it again."""
    a = dv / (duration * dt)

    def profile(t: int) -> float:
        if start <= t < start + duration:
            return a
        if start + duration <= t < start + 2 * duration:
            return -a
        return 0.0
    return profile


def random_profile(rng: np.random.Generator, duration: int, *, pieces: int = 8,
                   a_lo: float = -1.5, a_hi: float = 1.5) -> Callable[[int], float]:
    """Piecewise-constant random acceleration profile (held for equal pieces)."""
    edges = np.sort(rng.integers(0, duration, size=pieces - 1))
    levels = rng.uniform(a_lo, a_hi, size=pieces)
    levels[rng.random(pieces) < 0.3] = 0.0
    edges_l, levels_l = edges.tolist(), levels.tolist()

    def profile(t: int) -> float:
        i = 0
        while i < len(edges_l) and t >= edges_l[i]:
            i += 1
        return levels_l[i]
    return profile


def integrate(state: VehicleState, a: float, dt: float = DT,
              a_min: float = A_MIN, a_max: float = A_MAX) -> VehicleState:
    a = clamp_accel(a, a_min, a_max)
    v = state.velocity + a * dt
    if v < 0.0:
        v = 0.0
    return replace(state, position=state.position + v * dt, velocity=v, acceleration=a)


def sense(gap: float, v: float, a: float, rng: np.random.Generator,
          sigma_d: float = 0.01, sigma_v: float = 0.01) -> StatusVector:
    if sigma_d < 0 or sigma_v < 0:
        raise ValueError("noise deviations must be >= 0")
    nd, nv = rng.standard_normal(2)
    return StatusVector(gap + sigma_d * nd, v + sigma_v * nv, a)


def simulate_perfect_platoon(profile: Callable[[int], float], n_vehicles: int = 8,
                             duration: int = 6000, weights: ControlWeights = ControlWeights(),
                             v0: float = 10.0, control_every: int = 10, dt: float = DT,
                             length: float = VEHICLE_LENGTH) -> np.ndarray:
    """Platoon under perfect communication; returns gaps, shape (duration, n-1).

    The controller sees exact statuses and its assignments take effect in the
    next slot, the same timing the networked engine uses.
    """
    n = n_vehicles
    x = [-(k * (weights.d_des + length)) for k in range(n)]
    v = [v0] * n
    a = [0.0] * n
    a_cmd = [0.0] * n
    gaps = np.empty((duration, n - 1))
    for t in range(duration):
        a[0] = clamp_accel(profile(t))
        for k in range(1, n):
            a[k] = a_cmd[k]
        for k in range(n):
            vk = v[k] + a[k] * dt
            v[k] = vk if vk > 0.0 else 0.0
            x[k] += v[k] * dt
        for k in range(1, n):
            gaps[t, k - 1] = x[k - 1] - x[k] - length
        if t % control_every == 0:
            new = [a[0]] + [0.0] * (n - 1)
            for k in range(1, n):
                new[k] = cacc_acceleration(k + 1, gaps[t, k - 1], v[k], v[k - 1], v[0],
                                           new[k - 1], new[0], weights)
            a_cmd = new
    return gaps


def peak_gap_deviation(gaps: np.ndarray, d_des: float) -> np.ndarray:
    return np.max(np.abs(gaps - d_des), axis=0)


TRAJECTORY_COLUMNS = ("slot", "platoon", "vehicle", "position", "velocity", "acceleration",
                      "gap", "gap_error")
