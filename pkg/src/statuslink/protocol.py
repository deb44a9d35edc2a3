"""Parallel transmit / receive function blocks.

Status reaches the destination along two paths: OTA packets for samples the
shared model did not expect, and the model's own prediction otherwise.  Both
ends run the same prediction so that, while they agree on model and history,
the destination's reconstruction equals the source's view of it.

Every packet carries the slot at which its payload was sampled.  Receivers
index payloads at that slot and replay their predictions forward, so access
or processing latency does not break alignment.  The source replays in the
same way when a model calibration is confirmed, or when a transmission it had
assumed delivered turns out not to have been sent.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .status_model import (
    StatusHistory,
    StatusModel,
    StatusVector,
    estimate_lms,
    predict_with_input,
)

BROADCAST = -1


class ClockSkew(RuntimeError):
    pass


class StaleTimestamp(ValueError):
    pass


class PacketKind(str, Enum):
    STATUS = "status"
    CALIBRATION = "calibration"
    CONFIRMATION = "confirmation"
    CORRECTION = "correction"
    ASSIGNMENT = "assignment"


_REQUIRED = {
    PacketKind.STATUS: ("status",),
    PacketKind.CALIBRATION: ("model", "status"),
    PacketKind.CONFIRMATION: ("echo",),
    PacketKind.CORRECTION: ("model", "status"),
    PacketKind.ASSIGNMENT: ("accel",),
}


@dataclass(frozen=True)
class Packet:
    """Tagged packet; which payload fields are set depends on ``kind``.

    ``echo`` is the calibration timestamp a confirmation (or an acceleration
    assignment) refers back to.  ``m`` is the auxiliary transmission cost
    piggybacked on assignments in SMART mode.
    """

    kind: PacketKind
    src: int
    dst: int
    timestamp: int
    status: Optional[StatusVector] = None
    model: Optional[StatusModel] = None
    echo: Optional[int] = None
    accel: Optional[float] = None
    m: Optional[float] = None

    def __post_init__(self):
        for name in _REQUIRED[self.kind]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind.value} packet requires '{name}'")

    def summary(self) -> str:
        k = self.kind
        if k is PacketKind.STATUS:
            return "d=%.4f v=%.4f a=%.4f" % self.status
        if k is PacketKind.CONFIRMATION:
            return f"echo={self.echo}"
        if k is PacketKind.ASSIGNMENT:
            s = f"a={self.accel:.4f} echo={self.echo}"
            return s if self.m is None else s + f" m={self.m:.3f}"
        return "model=" + ";".join("%.6g" % c for c in self.model.flat) + \
            " d=%.4f v=%.4f a=%.4f" % self.status


def status_error(actual, predicted, norm: str = "l1") -> float:
    """Error over the compared components [distance, velocity]."""
    dd = actual[0] - predicted[0]
    dv = actual[1] - predicted[1]
    if norm == "l1":
        return abs(dd) + abs(dv)
    if norm == "l2":
        return math.sqrt(dd * dd + dv * dv)
    raise ValueError(f"unknown norm {norm!r}")


def tx_decide(actual, predicted, threshold: float, norm: str = "l1") -> bool:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return status_error(actual, predicted, norm) > threshold


def realign_timestamp(packet: Packet, local_clock: int, horizon: int = 1000) -> int:
    """Slot at which the receiver must index the packet payload."""
    if packet.timestamp > local_clock:
        raise StaleTimestamp(f"timestamp {packet.timestamp} is ahead of clock {local_clock}")
    if local_clock - packet.timestamp > horizon:
        raise StaleTimestamp(
            f"timestamp {packet.timestamp} older than horizon {horizon} at {local_clock}"
        )
    return packet.timestamp


RESYNC_RULES = ("none", "first", "always")


def _check_resync(rule: str) -> None:
    if rule not in RESYNC_RULES:
        raise ValueError(f"resync must be one of {RESYNC_RULES}")


class _EstimateLog:
    """Per-slot estimates plus the model timeline, replayable from any slot
    inside the horizon.

    A model entry ``(k, M)`` means ``M`` produces the predictions of slots
    after ``k``.
    """

    def __init__(self, model: StatusModel, initial: StatusVector, horizon: int, keep: bool):
        self.horizon = horizon
        self.keep = keep
        self.base = 0             # slot of _est[0]; slot -1 holds the initial estimate
        self._est = []
        self._inputs = []         # known acceleration used when predicting each slot
        self.initial = initial
        self.models = [(-(1 << 62), model)]
        self.overrides: dict[int, StatusVector] = {}
        self.last = -1

    @property
    def model(self) -> StatusModel:
        return self.models[-1][1]

    def get(self, slot: int) -> StatusVector:
        if slot < self.base:
            return self.initial if slot == self.base - 1 else self._fail(slot)
        return self._est[slot - self.base]

    def _fail(self, slot):
        raise StaleTimestamp(f"slot {slot} is outside the replay horizon")

    def push(self, slot: int, est: StatusVector, accel) -> None:
        self._est.append(est)
        self._inputs.append(accel)
        self.last = slot
        if not self.keep and len(self._est) > 2 * self.horizon + 8:
            cut = len(self._est) - (self.horizon + 4)
            self.initial = self._est[cut - 1]
            del self._est[:cut]
            del self._inputs[:cut]
            self.base += cut
            lo = self.base
            self.overrides = {k: v for k, v in self.overrides.items() if k >= lo}
            i = 0
            while i + 1 < len(self.models) and self.models[i + 1][0] < lo:
                i += 1
            if i:
                del self.models[:i]

    def set_model(self, from_slot: int, model: StatusModel) -> None:
        ms = self.models
        i = len(ms)
        while i > 0 and ms[i - 1][0] > from_slot:
            i -= 1
        if i > 0 and ms[i - 1][0] == from_slot:
            ms[i - 1] = (from_slot, model)
        else:
            ms.insert(i, (from_slot, model))

    def replay(self, start: int) -> None:
        """Recompute every estimate from ``start`` to the last slot."""
        if start < self.base:
            self._fail(start)
        ms = self.models
        j = 0
        while j + 1 < len(ms) and ms[j + 1][0] < start:
            j += 1
        prev = self.get(start - 1)
        est, inputs, base, ov = self._est, self._inputs, self.base, self.overrides
        for k in range(start, self.last + 1):
            while j + 1 < len(ms) and ms[j + 1][0] < k:
                j += 1
            s = ov.get(k)
            if s is None:
                s = predict_with_input(ms[j][1].flat, prev, inputs[k - base])
            est[k - base] = s
            prev = s

    def series(self, start: int = 0) -> list:
        start = max(start, self.base)
        return self._est[start - self.base:]


@dataclass
class _Pending:
    model: StatusModel
    timestamp: int
    status: Optional[StatusVector] = None
    sent_at: Optional[int] = None
    deadline: Optional[int] = None


class ParallelTransmitter:
    """Source-side PTxFB for one (source, destination) pair.

    Call :meth:`step` exactly once per slot with the sensed status.  Packets
    returned there are handed to the channel; the channel reports back
    through :meth:`on_transmitted`, :meth:`on_dropped`, :meth:`on_ack` (only
    with ``ack_feedback``) and :meth:`receive`.
    """

    def __init__(self, src: int, dst: int, model: StatusModel, *,
                 threshold: float = 0.1, norm: str = "l1",
                 decide_every: int = 10, decide_phase: int = 0,
                 model_every: Optional[int] = 100, model_phase: int = 0,
                 bootstrap_every: Optional[int] = None,
                 correction_every: Optional[int] = None, correction_phase: Optional[int] = None,
                 window: int = 100, ridge: float = 0.0, resync: str = "none",
                 confirm_timeout: int = 10,
                 ack_feedback: bool = False, known_input: bool = True,
                 horizon: int = 1000, initial_estimate: StatusVector = StatusVector.zero(),
                 keep_log: bool = False):
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        self.src, self.dst = src, dst
        self.threshold = threshold
        self.norm = norm
        self.decide_every, self.decide_phase = decide_every, decide_phase
        self.model_every, self.model_phase = model_every, model_phase
        # calibration cadence until the first confirmation
        self.bootstrap_every = bootstrap_every or model_every
        self.correction_every = correction_every
        if correction_phase is None and correction_every:
            correction_phase = correction_every // 2
        self.correction_phase = correction_phase
        self.window = window
        self.ridge = ridge
        _check_resync(resync)
        self.resync = resync
        self.confirm_timeout = confirm_timeout
        self.ack_feedback = ack_feedback
        self.known_input = known_input
        self.horizon = horizon
        self.history = StatusHistory(max(window + 1, horizon + 2))
        self.log = _EstimateLog(model, StatusVector(*initial_estimate), horizon, keep_log)
        self.estimate = self.log.initial
        self.pending: Optional[_Pending] = None
        self.last_slot: Optional[int] = None
        self._correction_due = False
        self.first_confirmed: Optional[int] = None
        self.counts = {"status": 0, "calibration": 0, "correction": 0,
                       "confirmed": 0, "timeouts": 0, "mismatched": 0}

    @property
    def model(self) -> StatusModel:
        return self.log.model

    def _commit(self, slot: int, status: StatusVector) -> None:
        self.log.overrides[slot] = status

    def step(self, t: int, sensed: StatusVector) -> list[Packet]:
        if self.last_slot is not None and t != self.last_slot + 1:
            raise ClockSkew(f"expected slot {self.last_slot + 1}, got {t}")
        log = self.log
        s_bar = predict_with_input(log.models[-1][1].flat, self.estimate,
                                   sensed[2] if self.known_input else None)
        self.history.append(t, sensed)
        out = []
        est = s_bar

        if (t - self.decide_phase) % self.decide_every == 0 and \
                status_error(sensed, s_bar, self.norm) > self.threshold:
            out.append(Packet(PacketKind.STATUS, self.src, self.dst, t, status=sensed))
            self.counts["status"] += 1
            est = sensed
            log.overrides[t] = sensed

        pend = self.pending
        if pend is not None and pend.deadline is not None and t > pend.deadline:
            self.pending = pend = None
            self.counts["timeouts"] += 1

        every = self.model_every if self.first_confirmed is not None else self.bootstrap_every
        if every and pend is None and (t - self.model_phase) % every == 0 \
                and len(self.history) >= self.window + 1:
            new = estimate_lms(self.history, self.window, slot=t, ridge=self.ridge)
            out.append(Packet(PacketKind.CALIBRATION, self.src, self.dst, t,
                              model=new, status=sensed))
            self.pending = pend = _Pending(new, t, sensed)
            self.counts["calibration"] += 1

        if self.correction_every and (t - self.correction_phase) % self.correction_every == 0:
            self._correction_due = True
        if self._correction_due and pend is None:
            out.append(Packet(PacketKind.CORRECTION, self.src, self.dst, t,
                              model=log.models[-1][1], status=sensed))
            self.counts["correction"] += 1
            self._correction_due = False
            est = sensed
            log.overrides[t] = sensed

        log.push(t, est, sensed[2] if self.known_input else None)
        self.estimate = est
        self.last_slot = t
        return out

    def on_transmitted(self, packet: Packet, slot: int) -> None:
        pend = self.pending
        if packet.kind is PacketKind.CALIBRATION and pend is not None \
                and pend.timestamp == packet.timestamp and pend.sent_at is None:
            pend.sent_at = slot
            pend.deadline = slot + self.confirm_timeout

    def _retract(self, packet: Packet) -> None:
        if self.log.overrides.pop(packet.timestamp, None) is not None:
            self.log.replay(packet.timestamp)
            self.estimate = self.log.get(self.last_slot)

    def on_dropped(self, packet: Packet) -> None:
        """The channel discarded the packet before it went on air."""
        if packet.kind in (PacketKind.STATUS, PacketKind.CORRECTION):
            self._retract(packet)
        elif packet.kind is PacketKind.CALIBRATION and self.pending is not None \
                and self.pending.timestamp == packet.timestamp:
            self.pending = None

    def on_ack(self, packet: Packet, delivered: bool) -> None:
        if self.ack_feedback and not delivered and \
                packet.kind in (PacketKind.STATUS, PacketKind.CORRECTION):
            self._retract(packet)

    def receive(self, packet: Packet, t: int) -> None:
        if packet.kind is not PacketKind.CONFIRMATION:
            return
        pend = self.pending
        if pend is None or pend.deadline is None or t > pend.deadline:
            return
        if packet.echo != pend.timestamp:
            self.counts["mismatched"] += 1
            return
        # the piggybacked status re-anchors both ends at the calibration slot
        self.log.set_model(pend.timestamp, pend.model)
        if self.resync == "always" or (self.resync == "first" and self.first_confirmed is None):
            self.log.overrides[pend.timestamp] = pend.status
        self.log.replay(pend.timestamp)
        self.estimate = self.log.get(self.last_slot)
        self.pending = None
        self.counts["confirmed"] += 1
        if self.first_confirmed is None:
            self.first_confirmed = pend.timestamp

    def estimates(self, start: int = 0) -> list[StatusVector]:
        return self.log.series(start)


class ParallelReceiver:
    """Destination-side PRxFB: one reconstructed status per slot."""

    def __init__(self, node: int, src: int, model: StatusModel, *,
                 horizon: int = 1000, initial_estimate: StatusVector = StatusVector.zero(),
                 confirm_repetitions: int = 3, known_input: bool = True,
                 resync: str = "none", keep_log: bool = False):
        self.node, self.src = node, src
        _check_resync(resync)
        self.resync = resync
        self.horizon = horizon
        self.confirm_repetitions = confirm_repetitions
        self.known_input = known_input
        self.log = _EstimateLog(model, StatusVector(*initial_estimate), horizon, keep_log)
        self.estimate = self.log.initial
        self.last_slot: Optional[int] = None
        self.last_calibration_timestamp: Optional[int] = None
        self._outbox: dict[int, list[Packet]] = {}
        self.last_delivery: Optional[int] = None
        # freshest raw status payload
        self.last_status = self.estimate
        self.counts = {"status": 0, "calibration": 0, "correction": 0,
                       "stale": 0, "unknown": 0}

    @property
    def model(self) -> StatusModel:
        return self.log.model

    @property
    def agreed(self) -> bool:
        """True once the model in use was fitted from data rather than drawn at start."""
        return self.log.model.estimated_at >= 0

    def step(self, t: int, received: Iterable[Packet] = (), accel: Optional[float] = None) -> StatusVector:
        if self.last_slot is not None and t != self.last_slot + 1:
            raise ClockSkew(f"expected slot {self.last_slot + 1}, got {t}")
        log = self.log
        a_in = accel if self.known_input else None
        est = predict_with_input(log.models[-1][1].flat, self.estimate, a_in)
        log.push(t, est, a_in)
        self.last_slot = t
        self.estimate = est
        if received:
            self._apply(t, received)
        return self.estimate

    def _apply(self, t: int, received: Iterable[Packet]) -> None:
        log = self.log
        start = None
        for p in received:
            try:
                ts = realign_timestamp(p, t, self.horizon)
            except StaleTimestamp:
                self.counts["stale"] += 1
                continue
            kind = p.kind
            if kind is PacketKind.STATUS:
                log.overrides[ts] = p.status
                k = ts
            elif kind is PacketKind.CORRECTION:
                log.set_model(ts, p.model)
                log.overrides[ts] = p.status
                k = ts
            elif kind is PacketKind.CALIBRATION:
                anchor = self.resync == "always" or (self.resync == "first" and not self.agreed)
                log.set_model(ts, p.model)
                if anchor:
                    log.overrides[ts] = p.status
                self.last_calibration_timestamp = ts
                for r in range(1, self.confirm_repetitions + 1):
                    self._outbox.setdefault(t + r, []).append(
                        Packet(PacketKind.CONFIRMATION, self.node, p.src, t + r, echo=ts))
                k = ts if anchor else ts + 1
            else:
                self.counts["unknown"] += 1
                continue
            self.counts[kind.value] += 1
            if self.last_delivery is None or ts > self.last_delivery:
                self.last_delivery = ts
                self.last_status = p.status
            start = k if start is None else min(start, k)
        if start is not None and start <= t:
            log.replay(start)
            self.estimate = log.get(t)

    def poll(self, t: int) -> list[Packet]:
        """Packets (confirmations) due for transmission at slot ``t``."""
        return self._outbox.pop(t, []) if self._outbox else []

    def estimates(self, start: int = 0) -> list[StatusVector]:
        return self.log.series(start)


class PeriodicTransmitter:
    """Status-unaware source: one status packet every ``period`` slots."""

    def __init__(self, src: int, dst: int, period: int, phase: int = 0):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.src, self.dst = src, dst
        self.period, self.phase = period, phase
        self.last_slot = None
        self.counts = {"status": 0}
        self.threshold = 0.0

    def step(self, t: int, sensed: StatusVector) -> list[Packet]:
        if self.last_slot is not None and t != self.last_slot + 1:
            raise ClockSkew(f"expected slot {self.last_slot + 1}, got {t}")
        self.last_slot = t
        if (t - self.phase) % self.period == 0:
            self.counts["status"] += 1
            return [Packet(PacketKind.STATUS, self.src, self.dst, t, status=sensed)]
        return []

    def on_transmitted(self, packet, slot):
        pass

    def on_dropped(self, packet):
        pass

    def on_ack(self, packet, delivered):
        pass

    def receive(self, packet, t):
        pass


class HoldReceiver:
    """Status-unaware destination: holds the freshest delivered status."""

    def __init__(self, node: int, src: int, initial_estimate=StatusVector.zero()):
        self.node, self.src = node, src
        self.estimate = StatusVector(*initial_estimate)
        self._stamp = -1
        self.last_slot = None
        self.last_delivery = None
        self.agreed = True
        self.counts = {"status": 0, "unknown": 0}

    def step(self, t: int, received: Iterable[Packet] = (), accel=None) -> StatusVector:
        if self.last_slot is not None and t != self.last_slot + 1:
            raise ClockSkew(f"expected slot {self.last_slot + 1}, got {t}")
        self.last_slot = t
        for p in received:
            if p.kind is not PacketKind.STATUS:
                self.counts["unknown"] += 1
                continue
            self.counts["status"] += 1
            if p.timestamp > self._stamp:
                self._stamp = p.timestamp
                self.estimate = p.status
                self.last_delivery = p.timestamp
        self.last_status = self.estimate
        return self.estimate

    def poll(self, t: int) -> list[Packet]:
        return []


PACKET_TRACE_COLUMNS = ("slot", "src", "dst", "kind", "delivered", "collided", "hd_lost",
                        "payload_summary")


def write_packet_trace(path, records: Iterable) -> None:
    """Write reception records (see :class:`statuslink.mac.Reception`)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PACKET_TRACE_COLUMNS)
        for r in records:
            w.writerow((r.slot, r.packet.src, r.receiver, r.packet.kind.value,
                        int(r.outcome == "delivered"), int(r.outcome == "collided"),
                        int(r.outcome == "hd_lost"), r.packet.summary()))
