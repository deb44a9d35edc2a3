"""Slot-level C-V2X Mode-4 sidelink abstraction and an ideal channel.

Each packet picks one (subframe, subchannel) resource uniformly from the
selection window that opens at its earliest admissible slot.  Two or more
transmissions on one resource collide for every receiver; a node that
transmits in a subframe hears nothing in it (half duplex).  Connectivity is
all-to-all with no fading, so those are the only two loss mechanisms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .protocol import Packet, PacketKind


class Outcome(str, Enum):
    DELIVERED = "delivered"
    COLLIDED = "collided"
    HD_LOST = "hd_lost"


@dataclass(frozen=True)
class ResourcePool:
    rri: int = 10
    subchannels: int = 2

    def __post_init__(self):
        if self.rri < 1 or self.subchannels < 1:
            raise ValueError("rri and subchannels must be >= 1")

    @property
    def size(self) -> int:
        return self.rri * self.subchannels

    def resource(self, k: int) -> MacResource:
        return MacResource(k // self.subchannels, k % self.subchannels)


@dataclass(frozen=True, order=True)
class MacResource:
    """``subframe`` is the offset inside the selection window."""

    subframe: int
    subchannel: int


def select_resource(rng: np.random.Generator, pool: ResourcePool, earliest: int = 0) -> MacResource:
    """Uniform draw over the ``rri x subchannels`` window opening at ``earliest``.

    The returned subframe is relative to ``earliest``; the absolute slot is
    ``earliest + resource.subframe``.
    """
    return pool.resource(int(rng.integers(pool.size)))


@dataclass(frozen=True)
class Reception:
    slot: int
    packet: Packet
    receiver: int
    outcome: str

    @property
    def delivered(self) -> bool:
        return self.outcome == Outcome.DELIVERED


def _payload(p) -> tuple:
    return (p,) if isinstance(p, Packet) else tuple(p)


def resolve_subframe(transmissions: Iterable[tuple], receivers: Optional[Iterable[int]] = None,
                     slot: int = 0) -> list[Reception]:
    """Outcomes for one subframe.

    ``transmissions`` holds ``(src, MacResource, packet_or_packets)``; every
    packet is judged at its ``dst`` (if that node is in ``receivers``).
    """
    txs = list(transmissions)
    used: dict[int, int] = {}
    for _, res, _ in txs:
        used[res.subchannel] = used.get(res.subchannel, 0) + 1
    talking = {src for src, _, _ in txs}
    allowed = None if receivers is None else set(receivers)
    out = []
    for src, res, payload in txs:
        collided = used[res.subchannel] > 1
        for p in _payload(payload):
            dst = p.dst
            if allowed is not None and dst not in allowed:
                continue
            if collided:
                o = Outcome.COLLIDED
            elif dst in talking:
                o = Outcome.HD_LOST
            else:
                o = Outcome.DELIVERED
            out.append(Reception(slot, p, dst, o))
    return out


def occupancy(transmissions: Iterable[tuple], pool: ResourcePool, n_subframes: int) -> float:
    """Fraction of the window's resources used by at least one transmission.

    ``transmissions`` holds ``(slot, subchannel)`` pairs.
    """
    if n_subframes < 1:
        raise ValueError("window must span at least one subframe")
    distinct = {(int(s), int(c)) for s, c in transmissions}
    return len(distinct) / (n_subframes * pool.subchannels)


class _Draws:
    """Block-buffered uniform integers in ``[0, high)`` from one generator."""

    def __init__(self, rng: np.random.Generator, high: int, block: int = 4096):
        self.rng, self.high, self.block = rng, high, block
        self._buf: list[int] = []
        self._i = 0

    def next(self) -> int:
        if self._i >= len(self._buf):
            self._buf = self.rng.integers(self.high, size=self.block).tolist()
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


@dataclass
class Transmission:
    slot: int
    src: int
    subchannel: int
    packets: tuple


@dataclass
class ResolvedSlot:
    """Everything the engine needs after resolving one subframe."""

    receptions: list
    sent: list          # Transmission objects that went on air this slot
    dropped: list       # (src, Packet) discarded before transmission


class SpsMac:
    """Per-packet random resource selection with collision / HD resolution.

    ``persistence`` > 1 keeps a node's selected resource phase for that many
    transmissions (semi-persistent reservation); the default of 1 reselects
    for every packet.  Kinds in ``exempt`` bypass contention and are delivered
    in the slot they are submitted.
    """

    REPLACEABLE = (PacketKind.STATUS, PacketKind.ASSIGNMENT)

    def __init__(self, pool: ResourcePool, rng: np.random.Generator, *,
                 exempt: Sequence[PacketKind] = (), persistence: int = 1,
                 keep_events: bool = False):
        if persistence < 1:
            raise ValueError("persistence must be >= 1")
        self.pool = pool
        self._draw = _Draws(rng, pool.size)
        self.exempt = frozenset(exempt)
        self.persistence = persistence
        self._sched: dict[int, list[Transmission]] = {}
        self._busy: dict[int, set] = {}          # src -> slots it already transmits in
        self._queued: dict[tuple, Transmission] = {}   # (src, dst, kind) -> unsent
        self._reserved: dict[tuple, list] = {}   # (src, kind) -> [phase, subchannel, remaining]
        self._now_exempt: list[Transmission] = []
        self._pending_drops: list = []
        self.keep_events = keep_events
        self.events: list[tuple] = []
        self.stats = {"transmissions": 0, "collided": 0, "hd_lost": 0, "delivered": 0,
                      "dropped": 0, "used_resources": 0, "subframes": 0}

    def _choose(self, src: int, earliest: int, key) -> Optional[tuple[int, int]]:
        busy = self._busy.get(src)
        pool = self.pool
        if self.persistence > 1:
            r = self._reserved.get(key)
            if r is not None and r[2] > 0:
                slot = earliest + (r[0] - earliest) % pool.rri
                if not busy or slot not in busy:
                    r[2] -= 1
                    return slot, r[1]
        for _ in range(4 * pool.size):
            k = self._draw.next()
            slot = earliest + k // pool.subchannels
            if not busy or slot not in busy:
                if self.persistence > 1:
                    self._reserved[key] = [slot % pool.rri, k % pool.subchannels, self.persistence - 1]
                return slot, k % pool.subchannels
        return None

    def submit(self, src: int, packets: Sequence[Packet], t: int, earliest: Optional[int] = None,
               bundle: bool = False) -> None:
        """Queue packets generated at slot ``t``.

        With ``bundle`` the packets share one transmission (a broadcast frame
        with several addressees).
        """
        if not packets:
            return
        earliest = t if earliest is None else earliest
        groups = [tuple(packets)] if bundle else [(p,) for p in packets]
        for group in groups:
            kind = group[0].kind
            if kind in self.exempt:
                self._now_exempt.append(Transmission(max(t, earliest), src, -1, group))
                continue
            qkey = None
            if kind in self.REPLACEABLE:
                qkey = (src, group[0].dst if len(group) == 1 else None, kind)
                old = self._queued.pop(qkey, None)
                if old is not None and old.slot >= earliest:
                    self._unschedule(old)
                    self._pending_drops.extend((src, p) for p in old.packets)
            choice = self._choose(src, earliest, (src, kind))
            if choice is None:
                self._pending_drops.extend((src, p) for p in group)
                continue
            slot, sub = choice
            tx = Transmission(slot, src, sub, group)
            self._sched.setdefault(slot, []).append(tx)
            self._busy.setdefault(src, set()).add(slot)
            if qkey is not None:
                self._queued[qkey] = tx

    def _unschedule(self, tx: Transmission) -> None:
        lst = self._sched.get(tx.slot)
        if lst is not None:
            lst.remove(tx)
        busy = self._busy.get(tx.src)
        if busy is not None:
            busy.discard(tx.slot)

    def resolve(self, t: int) -> ResolvedSlot:
        txs = self._sched.pop(t, [])
        dropped, self._pending_drops = self._pending_drops, []
        for tx in txs:
            self._busy[tx.src].discard(t)
            for p in tx.packets:
                k = (tx.src, p.dst if len(tx.packets) == 1 else None, p.kind)
                if self._queued.get(k) is tx:
                    del self._queued[k]
        st = self.stats
        st["subframes"] += 1
        receptions = []
        if txs:
            per_sub: dict[int, int] = {}
            for tx in txs:
                per_sub[tx.subchannel] = per_sub.get(tx.subchannel, 0) + 1
            talking = {tx.src for tx in txs}
            st["used_resources"] += len(per_sub)
            st["transmissions"] += len(txs)
            for tx in txs:
                collided = per_sub[tx.subchannel] > 1
                if collided:
                    st["collided"] += 1
                if self.keep_events:
                    self.events.append((t, tx.subchannel, tx.src, "collided" if collided else "clear"))
                for p in tx.packets:
                    if collided:
                        o = Outcome.COLLIDED
                    elif p.dst in talking:
                        o = Outcome.HD_LOST
                        st["hd_lost"] += 1
                    else:
                        o = Outcome.DELIVERED
                        st["delivered"] += 1
                    receptions.append(Reception(t, p, p.dst, o))
        if self._now_exempt:
            ex = [tx for tx in self._now_exempt if tx.slot <= t]
            self._now_exempt = [tx for tx in self._now_exempt if tx.slot > t]
            for tx in ex:
                for p in tx.packets:
                    receptions.append(Reception(t, p, p.dst, Outcome.DELIVERED))
            txs = txs + ex
        st["dropped"] += len(dropped)
        return ResolvedSlot(receptions, txs, dropped)

    def collisions(self) -> int:
        return self.stats["collided"]

    def occupancy(self) -> float:
        st = self.stats
        if st["subframes"] == 0:
            return 0.0
        return st["used_resources"] / (st["subframes"] * self.pool.subchannels)


class IdealChannel:
    """Loss-free unless ``drop(packet, air_slot)`` says otherwise.

    Packets go on air at ``max(t, earliest)`` and are received ``latency``
    slots later.
    """

    def __init__(self, latency: int = 0, drop: Optional[Callable[[Packet, int], bool]] = None):
        if latency < 0:
            raise ValueError("latency must be >= 0")
        self.latency = latency
        self.drop = drop
        self._air: dict[int, list[Transmission]] = {}
        self._arrivals: dict[int, list[Reception]] = {}
        self.stats = {"transmissions": 0, "collided": 0, "hd_lost": 0, "delivered": 0,
                      "dropped": 0, "lost": 0, "used_resources": 0, "subframes": 0}

    def submit(self, src: int, packets: Sequence[Packet], t: int, earliest: Optional[int] = None,
               bundle: bool = False) -> None:
        if not packets:
            return
        slot = t if earliest is None else max(t, earliest)
        groups = [tuple(packets)] if bundle else [(p,) for p in packets]
        for g in groups:
            self._air.setdefault(slot, []).append(Transmission(slot, src, 0, g))

    def resolve(self, t: int) -> ResolvedSlot:
        txs = self._air.pop(t, [])
        st = self.stats
        st["subframes"] += 1
        st["transmissions"] += len(txs)
        for tx in txs:
            for p in tx.packets:
                if self.drop is not None and self.drop(p, t):
                    st["lost"] += 1
                    rec = Reception(t + self.latency, p, p.dst, Outcome.COLLIDED)
                else:
                    st["delivered"] += 1
                    rec = Reception(t + self.latency, p, p.dst, Outcome.DELIVERED)
                self._arrivals.setdefault(t + self.latency, []).append(rec)
        return ResolvedSlot(self._arrivals.pop(t, []), txs, [])

    def collisions(self) -> int:
        return self.stats["lost"]

    def occupancy(self) -> float:
        return 0.0


MAC_EVENT_COLUMNS = ("slot", "subchannel", "src", "outcome")


def write_mac_events(path, events: Iterable[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MAC_EVENT_COLUMNS)
        w.writerows(events)
