"""Per-interval radio resource scheduler with reuse-set partitioning.

Links queued for a control interval are partitioned into reuse sets by greedy
peeling: a candidate set is trimmed until every member clears its minimum-rate
floor given the set's mutual interference, then until the resource-sharing
feasibility conditions hold; survivors form one set and the procedure repeats
on the remainder.  Every reuse set receives a contiguous, disjoint block of
resource blocks; within a block, infrastructure packets are serialized (at
most one infrastructure link per PRB anywhere on the street) while
device-to-device links stack on the same PRBs, which is what realizes spatial
frequency reuse.

Device-to-device target rates start at the bottom of the configured ladder
(widest allocation, least power) and escalate only when the interval cannot
fit the demand; if the ladder is exhausted, packets are pruned by ascending
link gain and postponed to the next interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import phy
from .config import LinkKind, SimConfig

_REL_TOL = 1e-9
_RATE_TOL = 1e-12


class InfeasibleConfigError(ValueError):
    """A single infrastructure packet cannot fit in one control interval."""


@dataclass(frozen=True)
class SchedLink:
    """One transmitter-receiver pair with packets queued this interval."""

    idx: int                   # dense per-interval id; lowest id wins tie-breaks
    kind: LinkKind
    tx_key: int
    rx_key: int
    gain: float                # deterministic own gain under the active model
    bs_id: int | None = None   # serving BS for infrastructure links


@dataclass
class Assignment:
    packet: phy.Packet
    link_idx: int
    start: int                 # global PRB interval [start, end), frequency-major
    end: int
    rate: float
    power_mw: float


@dataclass
class CiAllocation:
    assignments: list
    reuse_sets: list
    pruned: list
    d2d_rate: float | None
    n_prb: int
    demand: int

    def used_prb_count(self) -> int:
        intervals = sorted((a.start, a.end) for a in self.assignments)
        used, hi = 0, -1
        for s, e in intervals:
            if s > hi:
                used += e - s
                hi = e
            elif e > hi:
                used += e - hi
                hi = e
        return used


def spectrum_used_fraction(alloc: CiAllocation) -> float:
    """Fraction of the interval's PRBs allocated to at least one link."""
    if alloc.n_prb == 0:
        return 0.0
    return alloc.used_prb_count() / alloc.n_prb


# ---- interference constraints ---------------------------------------------------


def rate_lower_bounds(members, links, powers, gains, sigma2: float) -> dict:
    """Worst-case achievable rate of every member given the set's composition.

    Infrastructure receivers see all co-set device transmitters; device
    receivers additionally see, per base station, the strongest co-set
    infrastructure transmitter (at most one can share any given PRB).
    """
    idx = np.asarray(list(members), dtype=int)
    d2d_mask = np.array([links[i].kind == LinkKind.D2D for i in idx])
    p = np.array([powers[i] for i in idx])
    g = gains[np.ix_(idx, idx)]
    pg = p[:, None] * g                       # pg[a, b]: member a's power at b's receiver
    interf = pg[d2d_mask].sum(axis=0) if d2d_mask.any() else np.zeros(len(idx))
    interf[d2d_mask] -= np.diag(pg)[d2d_mask]  # no self-interference
    if d2d_mask.any() and (~d2d_mask).any():
        bs_ids = np.array([links[i].bs_id if links[i].kind == LinkKind.I2D else -1
                           for i in idx])
        for bs in np.unique(bs_ids[~d2d_mask]):
            group = pg[bs_ids == bs]
            interf[d2d_mask] += group.max(axis=0)[d2d_mask]
    lb = np.log2(1.0 + p * np.diag(g) / (sigma2 + interf))
    return dict(zip(members, lb.tolist()))


def sharing_violators(members, links, powers, gains, sigma2: float, w_n0_mw: float) -> set:
    """Members violating either resource-sharing feasibility condition.

    The first condition bounds device-to-device cross interference using a
    reference ratio taken over the full PRB bandwidth times the raw noise
    density; the second bounds both kinds against per-subcarrier noise.  Both
    are evaluated verbatim, including that dimensional asymmetry.
    """
    idx = np.asarray(list(members), dtype=int)
    d2d_mask = np.array([links[i].kind == LinkKind.D2D for i in idx])
    if not d2d_mask.any():
        return set()
    nd = int(d2d_mask.sum())
    nc = len(idx) - nd
    p = np.array([powers[i] for i in idx])
    g = gains[np.ix_(idx, idx)]
    pg = p[:, None] * g
    own = np.diag(pg)
    from_d2d = pg[d2d_mask].sum(axis=0)
    from_all = pg.sum(axis=0)
    viol = set()

    xi_1 = own[d2d_mask].max() / w_n0_mw
    denom_1 = math.expm1(math.log1p(nd * xi_1) / nd)
    lhs_1 = from_d2d[d2d_mask] - own[d2d_mask]
    rhs_1 = own[d2d_mask] / denom_1 - sigma2
    bad = lhs_1 >= rhs_1 - _REL_TOL * (sigma2 + lhs_1)   # strict inequality required
    viol.update(int(i) for i in idx[d2d_mask][bad])

    xi_2 = (own[d2d_mask] / sigma2).max()
    if nc:
        xi_2 = max(xi_2, own[~d2d_mask].max() / (nd * sigma2))
    ln_term = math.log1p(nd * xi_2)
    if nc:
        bs_ids = np.array([links[i].bs_id if links[i].kind == LinkKind.I2D else -1
                           for i in idx])
        counts = {bs: int(np.sum(bs_ids == bs)) for bs in np.unique(bs_ids[~d2d_mask])}
        expo = np.array([counts[b] for b in bs_ids[~d2d_mask]]) / (nc + nd)
        denom_c = np.expm1(expo * ln_term)
        lhs_c = from_d2d[~d2d_mask]
        rhs_c = own[~d2d_mask] / denom_c - sigma2
        bad = lhs_c > rhs_c + _REL_TOL * (sigma2 + lhs_c)
        viol.update(int(i) for i in idx[~d2d_mask][bad])
    denom_d = math.expm1(ln_term / (nc + nd))
    lhs_d = from_all[d2d_mask] - own[d2d_mask]
    rhs_d = own[d2d_mask] / denom_d - sigma2
    bad = lhs_d > rhs_d + _REL_TOL * (sigma2 + lhs_d)
    viol.update(int(i) for i in idx[d2d_mask][bad])
    return viol


def partition_reuse_sets(candidates, links, powers, targets, gains, sigma2: float,
                         w_n0_mw: float) -> list:
    """Greedy peeling into reuse sets; every emitted set satisfies both trims.

    While any member misses its rate floor, the member with the lowest bound
    is removed (lowest link id on ties).  The feasibility trim then removes
    the weakest violator until none remain.  Removals only ever raise the
    surviving members' bounds, so the first trim stays satisfied.  A set is
    never trimmed below one link.
    """
    remaining = sorted(candidates)
    sets = []
    while remaining:
        members = list(remaining)
        while len(members) > 1:
            lb = rate_lower_bounds(members, links, powers, gains, sigma2)
            if all(lb[i] >= targets[i] - _RATE_TOL for i in members):
                break
            weakest = min(members, key=lambda i: (lb[i], i))
            members.remove(weakest)
        while len(members) > 1:
            viol = sharing_violators(members, links, powers, gains, sigma2, w_n0_mw)
            if not viol:
                break
            lb = rate_lower_bounds(members, links, powers, gains, sigma2)
            worst = min(viol, key=lambda i: (lb[i], i))
            members.remove(worst)
        sets.append(members)
        taken = set(members)
        remaining = [i for i in remaining if i not in taken]
    return sets


# ---- interval scheduling --------------------------------------------------------


def _set_demand(member_set, links, active, rates, cfg) -> int:
    i2d_total = 0
    d2d_max = 0
    for i in member_set:
        need = sum(phy.required_prbs(p.coded_bits, rates[i], cfg) for p in active[i])
        if links[i].kind == LinkKind.I2D:
            i2d_total += need
        else:
            d2d_max = max(d2d_max, need)
    return max(i2d_total, d2d_max)


def schedule_ci(links, packets_by_link, gains: np.ndarray, cfg: SimConfig,
                margin_i2d_db: float, margin_d2d_db: float) -> CiAllocation:
    """Allocate one control interval's PRBs to the queued packets.

    ``gains[j, i]`` is the deterministic gain from the transmitter of link j
    to the receiver of link i under the active channel model; its diagonal
    must match each link's own gain.  Returns the allocation with every
    admitted packet holding exactly its required PRB count, plus the list of
    packets pruned (postponed to the next interval).
    """
    cap = cfg.n_prb_per_ci
    sigma2 = phy.subcarrier_noise_mw(cfg)
    w_n0 = cfg.prb_bandwidth * phy.noise_psd_mw_per_hz(cfg.noise_psd_dbm_hz)
    e_max = cfg.max_spectral_efficiency
    ladder = tuple(cfg.d2d_rate_ladder)

    for i, link in enumerate(links):
        if link.kind == LinkKind.I2D:
            for p in packets_by_link.get(i, []):
                if phy.required_prbs(p.coded_bits, e_max, cfg) > cap:
                    raise InfeasibleConfigError(
                        f"packet of {p.coded_bits:.0f} coded bits cannot fit one "
                        f"control interval ({cap} PRBs at rate {e_max})")

    active = {i: list(packets_by_link.get(i, [])) for i in range(len(links))}
    pruned = []

    def attempt():
        live = [i for i in range(len(links)) if active[i]]
        if not live:
            return CiAllocation([], [], [], None, cap, 0)
        for rung in ladder:
            rates = {i: e_max if links[i].kind == LinkKind.I2D else rung for i in live}
            margins = {i: margin_i2d_db if links[i].kind == LinkKind.I2D else margin_d2d_db
                       for i in live}
            powers = {i: phy.tx_power_per_subcarrier_mw(links[i].gain, rates[i],
                                                        margins[i], sigma2) for i in live}
            sets = partition_reuse_sets(live, links, powers, rates, gains, sigma2, w_n0)
            demand = sum(_set_demand(s, links, active, rates, cfg) for s in sets)
            if demand <= cap:
                return _layout(sets, links, active, rates, powers, cfg, cap, demand, rung)
        return None

    result = attempt()
    while result is None:
        victim = _prune_one(active, links)
        pruned.append(victim)
        result = attempt()
    result.pruned = pruned
    return result


def _prune_one(active, links) -> phy.Packet:
    """Postpone one packet: device links by ascending gain (multi-packet links
    first, then whole links), infrastructure packets only as a last resort."""
    def order(idxs):
        return sorted(idxs, key=lambda i: (links[i].gain, i))

    d2d_multi = [i for i, pks in active.items()
                 if pks and links[i].kind == LinkKind.D2D and len(pks) >= 2]
    d2d_any = [i for i, pks in active.items() if pks and links[i].kind == LinkKind.D2D]
    i2d_any = [i for i, pks in active.items() if pks and links[i].kind == LinkKind.I2D]
    for pool in (d2d_multi, d2d_any, i2d_any):
        if pool:
            victim_link = order(pool)[0]
            return active[victim_link].pop()
    raise AssertionError("nothing left to prune")


def _layout(sets, links, active, rates, powers, cfg, cap, demand, rung) -> CiAllocation:
    assignments = []
    base = 0
    for member_set in sets:
        i2d_members = sorted(i for i in member_set if links[i].kind == LinkKind.I2D)
        d2d_members = sorted(i for i in member_set if links[i].kind == LinkKind.D2D)
        cursor = base
        for i in i2d_members:
            for p in active[i]:
                need = phy.required_prbs(p.coded_bits, rates[i], cfg)
                assignments.append(Assignment(p, i, cursor, cursor + need,
                                              rates[i], powers[i]))
                cursor += need
        extent = cursor - base
        for i in d2d_members:
            c = base
            for p in active[i]:
                need = phy.required_prbs(p.coded_bits, rates[i], cfg)
                assignments.append(Assignment(p, i, c, c + need, rates[i], powers[i]))
                c += need
            extent = max(extent, c - base)
        base += extent
    assert base == demand <= cap
    live_sets = [list(s) for s in sets]
    return CiAllocation(assignments, live_sets, [], rung, cap, demand)
