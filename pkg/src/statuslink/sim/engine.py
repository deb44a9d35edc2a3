"""Time-slotted multi-platoon world loop.

Per 1 ms slot, in order: apply leader profile and last delivered
assignments, integrate kinematics, sense, run every follower's transmit
block, resolve the channel for this subframe, run every leader-side receive
block, recompute control on the control cadence (and queue acceleration
assignments for the following slots), and adapt the auxiliary cost at the
end of each evaluation window in smart mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..control import (
    ControlWeights,
    cacc_acceleration,
    impulse_profile,
    leader_profile_platoon,
    leader_profile_sdr,
    random_profile,
)
from ..mac import IdealChannel, ResourcePool, SpsMac
from ..protocol import (
    HoldReceiver,
    Packet,
    PacketKind,
    ParallelReceiver,
    ParallelTransmitter,
    PeriodicTransmitter,
)
from ..smart import CostAdapterState, adapt_cost, elect_supervisors, threshold_for
from ..status_model import StatusModel, StatusVector
from .config import ScenarioConfig

NOISE_BLOCK = 1024


@dataclass
class Link:
    index: int
    platoon: int
    position: int       # 1-based position of the follower in its platoon (leader = 0)
    src: int            # follower vehicle id
    dst: int            # leader vehicle id
    front: int          # vehicle id of the vehicle ahead
    tx: object
    rx: object


@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: dict
    links: list
    trajectories: list = field(default_factory=list)
    aoi: list = field(default_factory=list)
    m_trace: list = field(default_factory=list)
    packets: list = field(default_factory=list)
    status_slots: list = field(default_factory=list)    # per link: generation slots of status packets
    recovery_error: Optional[np.ndarray] = None         # (duration, links) when traced
    gaps: Optional[np.ndarray] = None                   # (duration, links) when traced


def leader_profile(cfg: ScenarioConfig, rng: np.random.Generator) -> Callable[[int], float]:
    if cfg.profile == "platoon":
        return leader_profile_platoon
    if cfg.profile == "sdr":
        return leader_profile_sdr
    if cfg.profile == "impulse":
        return impulse_profile()
    if cfg.profile == "random":
        return random_profile(rng, cfg.duration)
    return lambda t: 0.0


def _streams(seed: int) -> dict:
    names = ("noise", "mac", "phase", "model", "profile")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def build_links(cfg: ScenarioConfig, rng_phase: np.random.Generator,
                rng_model: np.random.Generator) -> list[Link]:
    V = cfg.vehicles
    n_links = cfg.platoons * (V - 1)
    unaware = cfg.mode == "status_unaware"
    period = cfg.update_interval if unaware else cfg.decide_every
    if cfg.random_phases:
        decide_phase = rng_phase.integers(period, size=n_links).tolist()
        model_phase = rng_phase.integers(max(cfg.model_every, 1), size=n_links).tolist()
    else:
        decide_phase = [0] * n_links
        model_phase = [0] * n_links
    corr_every = cfg.correction_every if cfg.mode in ("parallel", "smart") else 0
    # both ends know the formation the platoon starts in
    initial = StatusVector(cfg.d_des, cfg.v0, 0.0)
    links = []
    for p in range(cfg.platoons):
        for k in range(1, V):
            j = len(links)
            src, dst = p * V + k, p * V
            if unaware:
                tx = PeriodicTransmitter(src, dst, cfg.update_interval, decide_phase[j])
                rx = HoldReceiver(dst, src, initial_estimate=initial)
            else:
                # both ends start from the same random model draw
                model = StatusModel.random(rng_model)
                if cfg.correction_phase >= 0:
                    cphase = cfg.correction_phase
                elif corr_every:
                    cphase = (model_phase[j] + corr_every // 2) % corr_every
                else:
                    cphase = 0
                threshold = cfg.threshold
                if cfg.mode == "smart":
                    threshold = threshold_for(cfg.m_init, cfg.delta_base, cfg.m_ref)
                tx = ParallelTransmitter(
                    src, dst, model, threshold=threshold, norm=cfg.norm,
                    decide_every=cfg.decide_every, decide_phase=decide_phase[j],
                    model_every=cfg.model_every or None, model_phase=model_phase[j],
                    bootstrap_every=cfg.bootstrap_every or None,
                    correction_every=corr_every or None, correction_phase=cphase,
                    window=cfg.window, ridge=cfg.lms_ridge, resync=cfg.calibration_resync,
                    confirm_timeout=cfg.confirm_timeout,
                    ack_feedback=cfg.ack_feedback, known_input=cfg.known_input,
                    horizon=cfg.horizon, initial_estimate=initial, keep_log=cfg.keep_logs)
                rx = ParallelReceiver(
                    dst, src, model, horizon=cfg.horizon, initial_estimate=initial,
                    confirm_repetitions=cfg.confirm_repetitions,
                    known_input=cfg.known_input, resync=cfg.calibration_resync, keep_log=cfg.keep_logs)
            links.append(Link(j, p, k, src, dst, src - 1, tx, rx))
    return links


def make_channel(cfg: ScenarioConfig, rng: np.random.Generator, drop=None):
    if cfg.channel == "ideal":
        return IdealChannel(cfg.latency, drop)
    exempt = (PacketKind.CALIBRATION, PacketKind.CONFIRMATION) if cfg.exempt_handshake else ()
    return SpsMac(ResourcePool(cfg.rri, cfg.subchannels), rng, exempt=exempt,
                  persistence=cfg.persistence)


def run(cfg: ScenarioConfig, *, drop: Optional[Callable[[Packet, int], bool]] = None,
        profile: Optional[Callable[[int], float]] = None, record: bool = False,
        trace_series: bool = False) -> RunResult:
    """Simulate one replica.

    ``drop`` injects losses on the ideal channel; ``profile`` overrides the
    leader acceleration profile; ``record`` collects trajectory, AoI, packet
    and m traces; ``trace_series`` keeps per-slot gap and recovery-error
    arrays.
    """
    rngs = _streams(cfg.seed)
    P, V = cfg.platoons, cfg.vehicles
    n = P * V
    L = cfg.vehicle_length
    d_des = cfg.d_des
    dt = cfg.slot_ms * 1e-3
    a_min, a_max = cfg.a_min, cfg.a_max
    weights = ControlWeights(cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.w5, d_des)
    a1_of = profile or leader_profile(cfg, rngs["profile"])
    links = build_links(cfg, rngs["phase"], rngs["model"])
    nl = len(links)
    chan = make_channel(cfg, rngs["mac"], drop)
    smart = cfg.mode == "smart"
    norm_l1 = cfg.norm == "l1"

    leaders = [p * V for p in range(P)]
    is_leader = [False] * n
    for l in leaders:
        is_leader[l] = True
    link_of = [-1] * n
    for ln in links:
        link_of[ln.src] = ln.index
    by_platoon = [[ln for ln in links if ln.platoon == p] for p in range(P)]
    sns = elect_supervisors((ln.src, ln.dst) for ln in links)

    x = [0.0] * n
    for p in range(P):
        base = -p * (V * (d_des + L) + cfg.platoon_gap)
        for k in range(V):
            x[p * V + k] = base - k * (d_des + L)
    v = [cfg.v0] * n
    acc = [0.0] * n
    cmd = [0.0] * n
    known = [0.0] * nl
    apply_next: list = []
    known_next: list = []
    inbox: list = [[] for _ in range(nl)]
    est = [ln.rx.estimate for ln in links]
    txs = [ln.tx for ln in links]
    rxs = [ln.rx for ln in links]
    srcs = [ln.src for ln in links]
    fronts = [ln.front for ln in links]

    adapters = {l: CostAdapterState(m=cfg.m_init, m_min=cfg.m_min, m_max=cfg.m_max,
                                    m_int=cfg.m_int, eva_int=cfg.eva_int,
                                    delta_frac=cfg.delta_cost_frac) for l in sns}
    m_now = {l: cfg.m_init for l in sns}

    start = 0 if cfg.include_warmup else cfg.warmup
    min_gap = [math.inf] * nl
    sum_err = [0.0] * nl
    max_err = [0.0] * nl
    sum_aoi = [0.0] * nl
    win_sq = [0.0] * P
    win_n = 0
    window_costs = [[] for _ in range(P)]
    window_starts = []
    coll_prev = 0
    crash = False
    sent_by_kind = {k.value: 0 for k in PacketKind}
    status_slots = [[] for _ in range(nl)]
    res = RunResult(cfg, {}, links, status_slots=status_slots)
    if trace_series:
        res.recovery_error = np.zeros((cfg.duration, nl))
        res.gaps = np.zeros((cfg.duration, nl))
    sigma_d, sigma_v = cfg.sigma_d, cfg.sigma_v
    noise_rng = rngs["noise"]
    noise = []
    ni = NOISE_BLOCK
    trace_every = cfg.trace_every
    ctrl_every = cfg.control_every
    eva = cfg.eva_int
    ack = cfg.ack_feedback
    K_STATUS = PacketKind.STATUS
    K_CONF = PacketKind.CONFIRMATION
    K_ASSIGN = PacketKind.ASSIGNMENT
    vbar1 = [0.0] * P

    for t in range(cfg.duration):
        # (1) control application
        if apply_next:
            for vid, val in apply_next:
                cmd[vid] = val
            apply_next = []
        if known_next:
            for j, val in known_next:
                known[j] = val
            known_next = []
        for l in leaders:
            a = a1_of(t)
            acc[l] = a_min if a < a_min else a_max if a > a_max else a
        for j in range(nl):
            acc[srcs[j]] = cmd[srcs[j]]
        # (2) kinematics
        for i in range(n):
            vi = v[i] + acc[i] * dt
            if vi < 0.0:
                vi = 0.0
            v[i] = vi
            x[i] += vi * dt
        # (3) sensing
        if ni >= NOISE_BLOCK:
            noise = noise_rng.standard_normal((NOISE_BLOCK, nl + P, 2)).tolist()
            ni = 0
        nz = noise[ni]
        ni += 1
        sensed = []
        gaps = []
        for j in range(nl):
            s = srcs[j]
            g = x[fronts[j]] - x[s] - L
            gaps.append(g)
            e = nz[j]
            sensed.append(StatusVector(g + sigma_d * e[0], v[s] + sigma_v * e[1], acc[s]))
        for p in range(P):
            vbar1[p] = v[leaders[p]] + sigma_v * nz[nl + p][1]
        # (4) transmit blocks
        for j in range(nl):
            out = txs[j].step(t, sensed[j])
            if out:
                for pk in out:
                    if pk.kind is K_STATUS:
                        status_slots[j].append(t)
                chan.submit(srcs[j], out, t)
        for j in range(nl):
            conf = rxs[j].poll(t)
            if conf:
                chan.submit(links[j].dst, conf, t)
        # (5) channel
        r = chan.resolve(t)
        for tr in r.sent:
            src = tr.src
            if is_leader[src]:
                for pk in tr.packets:
                    sent_by_kind[pk.kind.value] += 1
                    if pk.kind is K_ASSIGN:
                        known_next.append((link_of[pk.dst], pk.accel))
            else:
                tx = txs[link_of[src]]
                for pk in tr.packets:
                    sent_by_kind[pk.kind.value] += 1
                    tx.on_transmitted(pk, t)
        for src, pk in r.dropped:
            if not is_leader[src]:
                txs[link_of[src]].on_dropped(pk)
        for rec in r.receptions:
            pk = rec.packet
            dst = rec.receiver
            if rec.outcome == "delivered":
                if is_leader[dst]:
                    inbox[link_of[pk.src]].append(pk)
                else:
                    j = link_of[dst]
                    if pk.kind is K_ASSIGN:
                        apply_next.append((dst, pk.accel))
                        if smart and pk.m is not None:
                            txs[j].threshold = threshold_for(pk.m, cfg.delta_base, cfg.m_ref)
                    elif pk.kind is K_CONF:
                        txs[j].receive(pk, t)
            if ack and not is_leader[pk.src]:
                txs[link_of[pk.src]].on_ack(pk, rec.outcome == "delivered")
        if record:
            res.packets.extend(r.receptions)
        # (6) receive blocks
        for j in range(nl):
            box = inbox[j]
            if box:
                est[j] = rxs[j].step(t, box, known[j])
                inbox[j] = []
            else:
                est[j] = rxs[j].step(t, (), known[j])
        # metrics
        for p in range(P):
            for ln in by_platoon[p]:
                e = gaps[ln.index] - d_des
                win_sq[p] += e * e
        win_n += 1
        for j in range(nl):
            g = gaps[j]
            if g <= 0.0:
                crash = True
        if t >= start:
            for j in range(nl):
                g = gaps[j]
                if g < min_gap[j]:
                    min_gap[j] = g
                e = est[j]
                s = srcs[j]
                dd = gaps[j] - e[0]
                dv = v[s] - e[1]
                err = abs(dd) + abs(dv) if norm_l1 else math.sqrt(dd * dd + dv * dv)
                sum_err[j] += err
                if err > max_err[j]:
                    max_err[j] = err
                last = rxs[j].last_delivery
                sum_aoi[j] += t - (last if last is not None else 0)
        if trace_series:
            for j in range(nl):
                e = est[j]
                dd = gaps[j] - e[0]
                dv = v[srcs[j]] - e[1]
                res.recovery_error[t, j] = abs(dd) + abs(dv) if norm_l1 else math.sqrt(dd * dd + dv * dv)
                res.gaps[t, j] = gaps[j]
        if record and t % trace_every == 0:
            for p in range(P):
                for k in range(V):
                    i = p * V + k
                    if k == 0:
                        res.trajectories.append((t, p, 1, x[i], v[i], acc[i], "", ""))
                    else:
                        g = gaps[link_of[i]]
                        res.trajectories.append((t, p, k + 1, x[i], v[i], acc[i], g, g - d_des))
            for j in range(nl):
                last = rxs[j].last_delivery
                res.aoi.append((t, srcs[j], links[j].dst, t - (last if last is not None else 0)))
        # (7) control and assignments
        if t % ctrl_every == 0:
            for p in range(P):
                l = leaders[p]
                a1 = acc[l]
                prev_cmd = a1
                v_front = vbar1[p]
                frame = []
                for ln in by_platoon[p]:
                    rx = ln.rx
                    # no agreed model yet: control from the freshest received status
                    e = est[ln.index] if rx.agreed else rx.last_status
                    ad = cacc_acceleration(ln.position + 1, e[0], e[1], v_front, vbar1[p],
                                           prev_cmd, a1, weights, a_min, a_max)
                    echo = getattr(rx, "last_calibration_timestamp", None)
                    frame.append(Packet(K_ASSIGN, l, ln.src, t, accel=ad, echo=echo,
                                        m=m_now[l] if smart else None))
                    prev_cmd = ad
                    v_front = e[1]
                chan.submit(l, frame, t, earliest=t + 1, bundle=True)
        # (8) evaluation windows and SMART adaptation
        if (t + 1) % eva == 0:
            coll = chan.collisions()
            dcoll = coll - coll_prev
            coll_prev = coll
            window_starts.append(t + 1 - eva)
            for p in range(P):
                cnt = win_n * len(by_platoon[p])
                cost = math.sqrt(win_sq[p] / cnt) if cnt else 0.0
                window_costs[p].append(cost)
                l = leaders[p]
                if smart and cfg.adapt:
                    st = adapt_cost(adapters[l], cost, dcoll)
                    adapters[l] = st
                    m_now[l] = st.m
                if record:
                    res.m_trace.append((t, l, m_now[l], cost, dcoll))
                win_sq[p] = 0.0
            win_n = 0

    n_metric = cfg.duration - start
    fleet_min_gap = min(min_gap) if nl else math.inf
    max_red = [max(0.0, d_des - g) for g in min_gap]
    post = [i for i, s in enumerate(window_starts) if s >= start]
    mean_cost = (float(np.mean([window_costs[p][i] for p in range(P) for i in post]))
                 if post else float("nan"))
    stats = dict(getattr(chan, "stats", {}))
    status_sent = sent_by_kind["status"]
    m = {
        "label": cfg.label,
        "seed": cfg.seed,
        "slots": cfg.duration,
        "metric_slots": n_metric,
        "crash": crash,
        "min_safe_distance": 0.0 if crash else max(0.0, fleet_min_gap),
        "max_gap_reduction": d_des if crash else max(max_red),
        "per_vehicle_max_gap_reduction": max_red,
        "per_vehicle_min_gap": min_gap,
        "mean_recovery_error": float(np.mean([s / n_metric for s in sum_err])),
        "max_recovery_error": float(max(max_err)),
        "per_link_mean_recovery_error": [s / n_metric for s in sum_err],
        "mean_aoi": float(np.mean([s / n_metric for s in sum_aoi])),
        "per_link_mean_aoi": [s / n_metric for s in sum_aoi],
        "packets_sent": sent_by_kind,
        "status_packets": status_sent,
        "generated": _generated(links),
        "collisions": int(stats.get("collided", 0)),
        "hd_losses": int(stats.get("hd_lost", 0)),
        "delivered": int(stats.get("delivered", 0)),
        "mac_dropped": int(stats.get("dropped", 0)),
        "transmissions": int(stats.get("transmissions", 0)),
        "occupancy": float(chan.occupancy()),
        "window_costs": window_costs,
        "window_starts": window_starts,
        "mean_window_cost": mean_cost,
        "final_m": {str(l): m_now[l] for l in sns} if smart else {},
        "supervision_nodes": sns,
    }
    res.metrics = m
    return res


def _generated(links) -> dict:
    out: dict = {}
    for ln in links:
        for k, c in ln.tx.counts.items():
            out["tx_" + k] = out.get("tx_" + k, 0) + c
        for k, c in ln.rx.counts.items():
            out["rx_" + k] = out.get("rx_" + k, 0) + c
    return out
