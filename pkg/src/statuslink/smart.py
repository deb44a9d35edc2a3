"""Status-aware transmit decisions priced by an auxiliary cost ``m``.

Three pieces live here:

* an exact average-cost solver for the single-node MDP in which every
  transmission is charged ``m`` (relative value iteration), plus the
  index probe built on it;
* the threshold family used by the live simulator, where a higher price
  ``m`` raises the prediction-error threshold;
* the supervision-node loop that adapts ``m`` from windowed cost and
  collision counts.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

ROW_TOL = 1e-9


class NoConvergence(RuntimeError):
    pass


class NotUnichain(ValueError):
    pass


@dataclass(frozen=True)
class DecoupledMdp:
    """Two-action MDP; action 0 is silent and action 1 is transmit."""

    cost0: np.ndarray
    cost1: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    m: float = 0.0

    def __post_init__(self):
        c0 = np.asarray(self.cost0, dtype=float)
        c1 = np.asarray(self.cost1, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        p1 = np.asarray(self.p1, dtype=float)
        n = c0.shape[0]
        if c0.shape != (n,) or c1.shape != (n,) or p0.shape != (n, n) or p1.shape != (n, n):
            raise ValueError("inconsistent MDP shapes")
        for c in (c0, c1):
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise ValueError("costs must be finite and >= 0")
        for p in (p0, p1):
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
                raise ValueError("transition rows must be distributions")
        if not np.isfinite(self.m):
            raise ValueError("m must be finite")
        for name, val in (("cost0", c0), ("cost1", c1), ("p0", p0), ("p1", p1)):
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return self.cost0.shape[0]

    def with_price(self, m: float) -> DecoupledMdp:
        return replace(self, m=float(m))


@dataclass(frozen=True)
class MdpSolution:
    policy: np.ndarray      # bool per state, True = transmit
    f: np.ndarray           # relative cost-to-go, f[0] = 0
    J: float                # average cost per slot
    sweeps: int


def _reach(p: np.ndarray) -> np.ndarray:
    """Boolean reachability (reflexive, transitive) of a transition matrix."""
    n = p.shape[0]
    r = (p > 0) | np.eye(n, dtype=bool)
    steps = 1
    while steps < n:
        r = (r.astype(np.int64) @ r.astype(np.int64)) > 0
        steps *= 2
    return r


def chain_is_unichain(p: np.ndarray) -> bool:
    """True iff the chain has exactly one closed communicating class."""
    r = _reach(np.asarray(p))
    recurrent = np.all(~r | r.T, axis=1)
    rec = np.flatnonzero(recurrent)
    return bool(r[np.ix_(rec, rec)].all())


def is_unichain(mdp: DecoupledMdp, policy: Optional[np.ndarray] = None) -> bool:
    """Unichain check of one policy, or by default of both constant policies
    (always silent and always transmit)."""
    if policy is not None:
        pol = np.asarray(policy, dtype=bool)
        return chain_is_unichain(np.where(pol[:, None], mdp.p1, mdp.p0))
    return chain_is_unichain(mdp.p0) and chain_is_unichain(mdp.p1)


def is_unichain_all_policies(mdp: DecoupledMdp) -> bool:
    """Sufficient check that every deterministic stationary policy is unichain.

    Grows a set from a candidate state by adding any state whose every action
    moves into the set with positive probability; success means that state is
    reachable from everywhere whatever the policy.
    """
    p0 = mdp.p0 > 0
    p1 = mdp.p1 > 0
    n = mdp.n_states
    for r in range(n):
        inside = np.zeros(n, dtype=bool)
        inside[r] = True
        while True:
            grow = ~inside & p0[:, inside].any(axis=1) & p1[:, inside].any(axis=1)
            if not grow.any():
                break
            inside |= grow
        if inside.all():
            return True
    return False


def _q_values(mdp: DecoupledMdp, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q0 = mdp.cost0 + mdp.p0 @ f
    q1 = mdp.m + mdp.cost1 + mdp.p1 @ f
    return q0, q1


def _choose(q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    # ties (up to rounding) go to silent
    scale = np.maximum(1.0, np.maximum(np.abs(q0), np.abs(q1)))
    return q1 < q0 - 1e-12 * scale


def solve_decoupled(mdp: DecoupledMdp, *, tol: float = 1e-8, max_sweeps: int = 100_000,
                    aperiodicity: float = 0.5, check: bool = True) -> MdpSolution:
    """Relative value iteration on the average-cost Bellman equation.

    Iterates on the transformed chain ``(1 - tau) I + tau P`` with costs
    scaled by ``tau`` so that periodic policies still converge; the relative
    values are unchanged by the transform and the average cost is rescaled
    by ``1 / tau`` at the end.
    """
    if check and not is_unichain(mdp):
        raise NotUnichain("a constant policy of this MDP has several recurrent classes")
    tau = aperiodicity
    if not 0 < tau <= 1:
        raise ValueError("aperiodicity must lie in (0, 1]")
    n = mdp.n_states
    h = np.zeros(n)
    c0t, c1t = tau * mdp.cost0, tau * (mdp.cost1 + mdp.m)
    p0t = tau * mdp.p0
    p1t = tau * mdp.p1
    keep = 1.0 - tau
    for sweep in range(1, max_sweeps + 1):
        t0 = c0t + p0t @ h + keep * h
        t1 = c1t + p1t @ h + keep * h
        new = np.minimum(t0, t1)
        g = new[0]
        new = new - g
        diff = new - h
        h = new
        if diff.max() - diff.min() < tol:
            break
    else:
        raise NoConvergence(f"span did not fall below {tol} in {max_sweeps} sweeps")
    J = g / tau
    q0, q1 = _q_values(mdp, h)
    return MdpSolution(_choose(q0, q1), h, float(J), sweep)


def bellman_residual(mdp: DecoupledMdp, f: np.ndarray, J: float) -> np.ndarray:
    q0, q1 = _q_values(mdp, np.asarray(f, dtype=float))
    return np.abs(f + J - np.minimum(q0, q1))


def price_grid(m_min: float, m_int: float, m_max: float) -> np.ndarray:
    n = int(round((m_max - m_min) / m_int)) + 1
    return np.round(m_min + m_int * np.arange(n), 12)


def index_of_state(mdp: DecoupledMdp, state: int, grid: Sequence[float],
                   m_int: Optional[float] = None, solutions: Optional[dict] = None) -> float:
    """Largest grid price at which ``state`` still transmits.

    Returns ``min(grid) - m_int`` when it never does.  ``solutions`` may hold
    cached results keyed by price.
    """
    grid = sorted(float(m) for m in grid)
    if m_int is None:
        m_int = grid[1] - grid[0] if len(grid) > 1 else 0.1
    best = None
    for m in grid:
        sol = solutions.get(m) if solutions is not None else None
        if sol is None:
            sol = solve_decoupled(mdp.with_price(m))
            if solutions is not None:
                solutions[m] = sol
        if sol.policy[state]:
            best = m
    return grid[0] - m_int if best is None else best


@dataclass
class IndexabilityReport:
    grid: np.ndarray
    indices: np.ndarray
    transmit_sets: dict
    violations: list = field(default_factory=list)

    @property
    def indexable(self) -> bool:
        return not self.violations


def indexability_report(mdp: DecoupledMdp, grid: Sequence[float],
                        m_int: Optional[float] = None) -> IndexabilityReport:
    """Indices of all states, with monotonicity violations listed.

    States are assumed ordered by error magnitude.  Two things are checked:
    at every price the transmit set is an up-set, and the index is
    non-decreasing in the state order.
    """
    grid = np.array(sorted(float(m) for m in grid))
    cache: dict = {}
    idx = np.array([index_of_state(mdp, s, grid, m_int, cache) for s in range(mdp.n_states)])
    sets = {float(m): cache[float(m)].policy.copy() for m in grid}
    violations = []
    for m, pol in sets.items():
        on = np.flatnonzero(pol)
        if on.size and not pol[on[0]:].all():
            violations.append(("not an up-set", m, int(on[0])))
    for s in range(1, mdp.n_states):
        if idx[s] < idx[s - 1]:
            violations.append(("index decreases", s, float(idx[s - 1]), float(idx[s])))
    return IndexabilityReport(grid, idx, sets, violations)


def error_chain_mdp(n_bins: int = 64, *, p_up: float = 0.5, p_down: float = 0.0,
                    success: float = 1.0, bin_width: float = 1.0, m: float = 0.0,
                    transmit_cost: str = "pre") -> DecoupledMdp:
    """Discretised prediction-error magnitude as a random walk.

    Silent: move up a bin with ``p_up``, down with ``p_down``, else stay (the
    walk is reflected at both ends).  Transmit: with probability ``success``
    the error resets to bin 0, otherwise the silent dynamics apply.  The
    per-slot cost is the squared error; with ``transmit_cost='post'`` the
    transmit branch is charged the expected squared error after the reset.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if p_up < 0 or p_down < 0 or p_up + p_down > 1:
        raise ValueError("invalid walk probabilities")
    err = bin_width * np.arange(n_bins)
    walk = np.zeros((n_bins, n_bins))
    for i in range(n_bins):
        up, down = min(i + 1, n_bins - 1), max(i - 1, 0)
        walk[i, up] += p_up
        walk[i, down] += p_down
        walk[i, i] += 1.0 - p_up - p_down
    reset = np.zeros((n_bins, n_bins))
    reset[:, 0] = 1.0
    p1 = success * reset + (1.0 - success) * walk
    c0 = err ** 2
    if transmit_cost == "pre":
        c1 = c0.copy()
    elif transmit_cost == "post":
        c1 = (1.0 - success) * c0
    else:
        raise ValueError("transmit_cost must be 'pre' or 'post'")
    return DecoupledMdp(c0, c1, walk, p1, m)


# ---------------------------------------------------------------- live policy

def threshold_for(m: float, delta_base: float = 0.1, m_ref: float = 1.0) -> float:
    """Prediction-error threshold charged by price ``m`` (linear, increasing)."""
    if m_ref <= 0:
        raise ValueError("m_ref must be > 0")
    return delta_base * m / m_ref


def policy_decide(m: float, prediction_error: float, delta_base: float = 0.1,
                  m_ref: float = 1.0) -> bool:
    return prediction_error > threshold_for(m, delta_base, m_ref)


@dataclass(frozen=True)
class CostAdapterState:
    m: float = 2.0
    m_min: float = 0.1
    m_max: float = 2.0
    m_int: float = 0.1
    eva_int: int = 1000
    cost_prev: Optional[float] = None
    collisions_prev: Optional[int] = None
    delta_cost: Optional[float] = None
    delta_frac: float = 0.05

    def __post_init__(self):
        if not self.m_min <= self.m <= self.m_max:
            raise ValueError("m must lie in [m_min, m_max]")
        if self.m_int <= 0 or self.eva_int < 1:
            raise ValueError("m_int and eva_int must be positive")


def adapt_cost(state: CostAdapterState, window_cost: float, window_collisions: int) -> CostAdapterState:
    """One evaluation-window update of the auxiliary cost.

    The first window only records the reference cost (and fixes the
    change-detection threshold when it was not given).
    """
    if state.cost_prev is None:
        dc = state.delta_cost
        if dc is None:
            dc = state.delta_frac * window_cost
        return replace(state, cost_prev=window_cost, collisions_prev=window_collisions,
                       delta_cost=dc)
    change = window_cost - state.cost_prev
    m = state.m
    if change > state.delta_cost and window_collisions > state.collisions_prev:
        m = min(m + state.m_int, state.m_max)
    elif abs(change) < state.delta_cost:
        pass
    else:
        m = max(m - state.m_int, state.m_min)
    m = round(m, 12)
    return replace(state, m=m, cost_prev=window_cost, collisions_prev=window_collisions)


def elect_supervisors(links: Iterable[tuple[int, int]]) -> list[int]:
    """Supervision nodes for ``(source, destination)`` links: every destination."""
    dest: dict[int, int] = {}
    for src, dst in links:
        if dest.setdefault(src, dst) != dst:
            raise ValueError(f"source {src} has more than one destination")
    return sorted(set(dest.values()))


M_TRACE_COLUMNS = ("slot", "sn_id", "m", "window_cost", "window_collisions")


def write_m_trace(path, rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(M_TRACE_COLUMNS)
        for slot, sn, m, cost, coll in rows:
            w.writerow((slot, sn, "%.6g" % m, "%.9g" % cost, coll))
